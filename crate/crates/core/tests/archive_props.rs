use std::collections::BTreeMap;

use dei_core::archive::{merge, Archive, BcGrid, Cell, Elite};
use dei_core::mars::BehavioralCharacteristic;
use dei_core::redcode::{parse, Warrior};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Update { w: u32, fitness: f64, tsp: f64, mc: f64 },
    Seed(Vec<(u32, f64, f64, f64)>),
}

fn grid() -> BcGrid {
    BcGrid::new(4, 3, 1.0, 1000.0).unwrap()
}

fn warrior(k: u32) -> Warrior {
    parse(&format!("MOV 0, {}", k + 1)).unwrap()
}

fn bc(tsp: f64, mc: f64) -> BehavioralCharacteristic {
    BehavioralCharacteristic { tsp, mc }
}

fn candidate() -> impl Strategy<Value = (u32, f64, f64, f64)> {
    // coarse fitness values so ties are common
    (0u32..50, (0u32..9).prop_map(|k| f64::from(k) * 0.25), 0.0..2000.0f64, 0.0..1.0f64)
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => candidate().prop_map(|(w, fitness, tsp, mc)| Op::Update { w, fitness, tsp, mc }),
        1 => prop::collection::vec(candidate(), 0..5).prop_map(Op::Seed),
    ]
}

fn snapshot(a: &Archive) -> BTreeMap<Cell, Elite> {
    a.elites().map(|e| (e.cell, e.clone())).collect()
}

fn check_metrics(a: &Archive) -> Result<(), TestCaseError> {
    let cells = a.elites().count();
    prop_assert_eq!(a.coverage(), cells as f64 / 12.0);
    let qd: f64 = a.elites().map(|e| e.fitness).sum();
    prop_assert!((a.qd_score() - qd).abs() < 1e-12);
    prop_assert!((0.0..=1.0).contains(&a.coverage()));
    Ok(())
}

fn build(ops: &[Op]) -> Result<Archive, TestCaseError> {
    let g = grid();
    let mut a = Archive::new(g.clone());
    for op in ops {
        let before = snapshot(&a);
        match op {
            Op::Update { w, fitness, tsp, mc } => {
                let cell = g.bin(&bc(*tsp, *mc));
                let accepted = a.update(warrior(*w), *fitness, bc(*tsp, *mc), 1);
                let expected = before.get(&cell).is_none_or(|inc| *fitness > inc.fitness);
                prop_assert_eq!(accepted, expected);
                for (c, e) in &before {
                    let now = a.get(*c).expect("cells never empty out");
                    prop_assert!(now.fitness >= e.fitness);
                    if *c != cell {
                        prop_assert_eq!(now, e);
                    }
                }
            }
            Op::Seed(received) => {
                let elites: Vec<Elite> = received
                    .iter()
                    .map(|&(w, f, t, m)| Elite::new(&g, warrior(w), f, bc(t, m), 2))
                    .collect();
                a.seed(elites);
                for (c, e) in &before {
                    prop_assert_eq!(a.get(*c), Some(e));
                }
            }
        }
        check_metrics(&a)?;
    }
    Ok(a)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn archive_laws(ops_a in prop::collection::vec(op(), 0..40), ops_b in prop::collection::vec(op(), 0..40)) {
        let a = build(&ops_a)?;
        let b = build(&ops_b)?;

        prop_assert_eq!(&merge(&[a.clone()]).unwrap(), &a);
        prop_assert_eq!(&merge(&[a.clone(), a.clone()]).unwrap(), &a);

        let m = merge(&[a.clone(), b.clone()]).unwrap();
        check_metrics(&m)?;
        prop_assert!(m.coverage() >= a.coverage().max(b.coverage()));
        for e in m.elites() {
            let best = [a.get(e.cell), b.get(e.cell)].into_iter().flatten().map(|x| x.fitness).fold(f64::MIN, f64::max);
            prop_assert_eq!(e.fitness, best);
        }
        for x in a.elites().chain(b.elites()) {
            prop_assert!(m.get(x.cell).is_some());
        }
        prop_assert_eq!(&merge(&[m.clone(), a.clone(), b.clone()]).unwrap(), &m);
    }
}
