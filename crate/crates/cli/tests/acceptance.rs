//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p dei-cli --test acceptance` runs everything (the
//! directional comparison takes several minutes in an optimized build).
//! Extra arguments select criteria by key substring, e.g.
//! `cargo test -p dei-cli --test acceptance -- gossip axl`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dei_core::archive::{merge, Archive, BcGrid, Cell, Elite};
use dei_core::experiment::{run_experiment, Condition, ExperimentConfig, MergeMode, NodeSpec, TrialSummary};
use dei_core::mars::{fitness, run_battle, run_battle_traced, BattleOutcome, BehavioralCharacteristic, CellSet, MarsConfig, WarriorResult};
use dei_core::mutation::OperatorSpec;
use dei_core::redcode::{parse, parse_with, random_warrior, serialize, OperatorBias, ParseOptions, Warrior};
use dei_gossip::axl::{AxlShim, Topology, DESTINATION_HEADER, FROM_HEADER};
use dei_gossip::scenarios::{churn_recovery, propagation, Tally};
use dei_gossip::sim::SimConfig;
use dei_gossip::PeerId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    key: &'static str,
    title: &'static str,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { key: "vm-golden", title: "VM golden behaviors", run: vm_golden },
    Criterion { key: "fitness-oracle", title: "survival-share fitness matches brute force", run: fitness_oracle },
    Criterion { key: "archive", title: "archive properties over 10,000 sequences", run: archive_properties },
    Criterion { key: "gossip", title: "gossip propagation and churn recovery", run: gossip_propagation },
    Criterion { key: "no-barrier", title: "slow node does not slow its peers", run: no_barrier },
    Criterion { key: "budget", title: "budget parity 250 vs 248 calls per round", run: budget_parity },
    Criterion { key: "determinism", title: "dei sim and dei report are byte-identical across runs", run: determinism },
    Criterion { key: "directional", title: "diverse coverage beats homogeneous and solo", run: directional },
    Criterion { key: "axl", title: "AXL shim conformance", run: axl_conformance },
    Criterion { key: "parser-fuzz", title: "parser round-trip and fuzz", run: parser_fuzz },
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.key.contains(f.as_str())))
        .collect();
    // keep panic messages from interleaving with the result lines
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &selected {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:<15} {} [{secs:.1}s] {detail}", c.key, c.title),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:<15} {} [{secs:.1}s] {detail}", c.key, c.title);
            }
        }
    }
    println!("{} of {} criteria passed", selected.len() - failed, selected.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn imp() -> Warrior {
    parse("MOV 0, 1").unwrap()
}

fn seed_warrior(name: &str) -> Warrior {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/warriors/seeds").join(name);
    parse(&fs::read_to_string(path).unwrap()).unwrap()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn vm_golden() -> Outcome {
    let cfg = MarsConfig::default();
    let limit = Duration::from_secs(1);

    let (alone, took) = timed(|| run_battle(&[imp()], &cfg, 0).unwrap());
    ensure!(alone.warriors[0].death_cycle.is_none(), "lone Imp died");
    ensure!(alone.lifespan(0) == cfg.max_cycles, "lone Imp lifespan {}", alone.lifespan(0));
    ensure!(took < limit, "lone Imp took {took:?}");

    let (dat, took) = timed(|| run_battle(&[parse("DAT #0, #0").unwrap(), imp()], &cfg, 0).unwrap());
    ensure!(dat.warriors[0].death_cycle == Some(1), "DAT died at {:?}", dat.warriors[0].death_cycle);
    ensure!(took < limit, "DAT battle took {took:?}");

    let (ties, took) = timed(|| {
        (0..20u64)
            .map(|seed| run_battle(&[imp(), imp()], &cfg, seed).unwrap())
            .collect::<Vec<BattleOutcome>>()
    });
    for (r, o) in ties.iter().enumerate() {
        ensure!(o.survivors() == [0, 1], "Imp vs Imp round {r}: survivors {:?}", o.survivors());
        ensure!(fitness(0, o) == 1.0 && fitness(1, o) == 1.0, "Imp vs Imp round {r} is not a tie");
    }
    ensure!(took < limit, "20 Imp battles took {took:?}");

    let trace = |seed: u64| {
        let mut lines = Vec::new();
        let pair = [seed_warrior("dwarf.red"), imp()];
        run_battle_traced(&pair, &cfg, seed, &mut |ev| lines.push(serde_json::to_string(ev).unwrap())).unwrap();
        lines
    };
    let (first, took) = timed(|| trace(7));
    ensure!(first == trace(7), "traces differ across reruns");
    ensure!(first != trace(8), "different seeds gave the same trace");
    ensure!(took < limit, "traced Dwarf vs Imp took {took:?}");
    Ok(format!("{} trace events reproduced", first.len()))
}

fn outcome(deaths: &[Option<u32>], t: u32) -> BattleOutcome {
    BattleOutcome {
        max_cycles: t,
        cycles_run: t,
        core_size: 8000,
        warriors: deaths
            .iter()
            .map(|&d| WarriorResult {
                death_cycle: d,
                touched: CellSet::new(8000),
                length: 1,
                load_address: 0,
            })
            .collect(),
    }
}

fn fitness_oracle() -> Outcome {
    const T: u32 = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        // an alive mask is a prefix of ones: alive until the death timestep
        let deaths: Vec<Option<u32>> = (0..2)
            .map(|_| {
                let d = rng.gen_range(1..=T + 1);
                (d <= T).then_some(d)
            })
            .collect();
        let masks: Vec<Vec<bool>> = deaths
            .iter()
            .map(|d| (1..=T).map(|tau| d.is_none_or(|d| tau < d)).collect())
            .collect();
        let o = outcome(&deaths, T);
        let mut total = 0.0;
        for i in 0..2 {
            let mut expected = 0.0;
            for tau in 0..T as usize {
                let alive = masks.iter().filter(|m| m[tau]).count();
                if masks[i][tau] {
                    expected += (2.0 / f64::from(T)) / alive as f64;
                }
            }
            let got = fitness(i, &o);
            worst = worst.max((got - expected).abs());
            ensure!((got - expected).abs() <= 1e-12, "case {case} warrior {i}: {got} vs {expected}");
            total += got;
        }
        ensure!(total <= 2.0, "case {case}: fitness sum {total} exceeds N");
    }
    let both = outcome(&[None, None], T);
    ensure!(fitness(0, &both) == 1.0 && fitness(1, &both) == 1.0, "both alive is not exactly 1.0");
    Ok(format!("1000 mask pairs, max deviation {worst:.1e}"))
}

fn archive_properties() -> Outcome {
    let grid = BcGrid::new(4, 3, 1.0, 1000.0).unwrap();
    let warriors: Vec<Warrior> = (1..=50).map(|k| parse(&format!("MOV 0, {k}")).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let candidate = |rng: &mut ChaCha8Rng| {
        let w = warriors[rng.gen_range(0..warriors.len())].clone();
        let f = f64::from(rng.gen_range(0..9u32)) * 0.25;
        let bc = BehavioralCharacteristic {
            tsp: rng.gen_range(0.0..2000.0),
            mc: rng.gen_range(0.0..1.0),
        };
        (w, f, bc)
    };
    let metrics_ok = |a: &Archive| {
        let n = a.elites().count();
        let qd: f64 = a.elites().map(|e| e.fitness).sum();
        a.coverage() == n as f64 / grid.total_cells() as f64 && (a.qd_score() - qd).abs() < 1e-12
    };
    let mut ops = 0usize;
    let mut previous: Option<Archive> = None;
    for seq in 0..10_000 {
        let mut a = Archive::new(grid.clone());
        for _ in 0..rng.gen_range(0..40) {
            ops += 1;
            let before: BTreeMap<Cell, Elite> = a.elites().map(|e| (e.cell, e.clone())).collect();
            if rng.gen_bool(0.8) {
                let (w, f, bc) = candidate(&mut rng);
                let cell = grid.bin(&bc);
                let accepted = a.update(w, f, bc, 1);
                let expected = before.get(&cell).is_none_or(|inc| f > inc.fitness);
                ensure!(accepted == expected, "sequence {seq}: acceptance {accepted}, expected {expected}");
                for (c, e) in &before {
                    let now = a.get(*c).ok_or(format!("sequence {seq}: cell emptied"))?;
                    ensure!(now.fitness >= e.fitness, "sequence {seq}: fitness fell in {c:?}");
                }
            } else {
                let received: Vec<Elite> = (0..rng.gen_range(0..5))
                    .map(|_| {
                        let (w, f, bc) = candidate(&mut rng);
                        Elite::new(&grid, w, f, bc, 2)
                    })
                    .collect();
                a.seed(received);
                for (c, e) in &before {
                    ensure!(a.get(*c) == Some(e), "sequence {seq}: seeding displaced {c:?}");
                }
            }
            ensure!(metrics_ok(&a), "sequence {seq}: coverage or QD-score disagrees with a recount");
        }
        ensure!(merge(&[a.clone(), a.clone()]).unwrap() == a, "sequence {seq}: merge is not idempotent");
        if let Some(b) = &previous {
            let m = merge(&[a.clone(), b.clone()]).unwrap();
            ensure!(metrics_ok(&m), "sequence {seq}: merged metrics disagree with a recount");
            ensure!(m.coverage() >= a.coverage().max(b.coverage()), "sequence {seq}: merge lost coverage");
            for e in m.elites() {
                let best = [a.get(e.cell), b.get(e.cell)].into_iter().flatten().map(|x| x.fitness).fold(f64::MIN, f64::max);
                ensure!(e.fitness == best, "sequence {seq}: merged {:?} is not the fitter occupant", e.cell);
            }
        }
        previous = Some(a);
    }
    Ok(format!("10000 sequences, {ops} operations"))
}

fn gossip_propagation() -> Outcome {
    let started = Instant::now();
    let config = SimConfig::default();
    let heartbeats = Duration::from_secs_f64(10.0 * config.gossip.heartbeat_secs);
    let mut parts = Vec::new();
    for n in [4usize, 8, 16, 32] {
        let t = propagation(&config, n as u64, n, 2, 1000, Duration::from_millis(100), heartbeats);
        ensure!(t.total == 1000, "N={n}: {} messages published", t.total);
        ensure!(t.rate() >= 0.99, "N={n}: {}/{} reached every node within 10 heartbeats", t.hits, t.total);
        // an eighth of the nodes, and at least one
        let churned = (n / 8).max(1);
        let mut c = Tally::default();
        for seed in 0..4 {
            c.add(churn_recovery(
                &config,
                seed,
                n,
                2,
                churned,
                Duration::from_millis(500),
                Duration::from_secs(30),
                Duration::from_secs(10),
            ));
        }
        ensure!(c.total > 0, "N={n}: no in-TTL messages during churn");
        ensure!(c.rate() >= 0.95, "N={n}: churn recovery {}/{}", c.hits, c.total);
        parts.push(format!("N={n} {:.1}% / churn {churned} {:.1}%", 100.0 * t.rate(), 100.0 * c.rate()));
    }
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:?}");
    Ok(parts.join(", "))
}

fn mock(profile: &str, latency_secs: f64) -> NodeSpec {
    NodeSpec {
        node_id: None,
        operator: OperatorSpec::Mock {
            profile: profile.into(),
            latency_secs,
            failure_rate: 0.0,
        },
        iters_per_round: None,
    }
}

fn quick_mars() -> MarsConfig {
    MarsConfig {
        max_cycles: 2000,
        rounds_per_pair: 2,
        ..Default::default()
    }
}

fn run_one(cfg: &ExperimentConfig) -> Result<(TrialSummary, tempfile::TempDir), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut s = run_experiment(cfg, dir.path()).map_err(|e| e.to_string())?;
    Ok((s.remove(0), dir))
}

fn no_barrier() -> Outcome {
    let profiles = ["bomber", "scanner", "replicator", "runner"];
    let config = |slow: f64| ExperimentConfig {
        name: "barrier".into(),
        condition: Condition::Diverse,
        rounds: 4,
        budget_per_round: 40,
        nodes: profiles
            .iter()
            .enumerate()
            .map(|(i, p)| mock(p, if i == 0 { slow } else { 1.0 }))
            .collect(),
        mars: quick_mars(),
        merge: MergeMode::Stored,
        ..Default::default()
    };
    let (base, _d1) = run_one(&config(1.0))?;
    let (slow, _d2) = run_one(&config(10.0))?;
    let mut worst: f64 = 0.0;
    for node in 1..4 {
        let b = &base.nodes[node].round_durations;
        let s = &slow.nodes[node].round_durations;
        ensure!(b.len() == 4 && s.len() == 4, "node {node}: missing rounds");
        for (r, (x, y)) in b.iter().zip(s).enumerate() {
            let rel = (y - x).abs() / x;
            worst = worst.max(rel);
            ensure!(rel <= 0.05, "node {node} round {}: {y:.2}s vs baseline {x:.2}s", r + 1);
        }
    }
    let slow_round = slow.nodes[0].round_durations[0];
    let fast_round = slow.nodes[1].round_durations[0];
    ensure!(slow_round >= 9.0 * fast_round, "slow node was not slow ({slow_round}s vs {fast_round}s)");
    Ok(format!(
        "fast rounds within {:.2}% of baseline; slow node {slow_round:.0}s vs {fast_round:.0}s per round",
        100.0 * worst
    ))
}

fn calls_per_round(dir: &Path, name: &str) -> Result<BTreeMap<u32, usize>, String> {
    let trial = dir.join(name).join("trial-0");
    let mut counts = BTreeMap::new();
    for entry in fs::read_dir(&trial).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path().join("calls.jsonl");
        if !path.exists() {
            continue;
        }
        for line in fs::read_to_string(&path).map_err(|e| e.to_string())?.lines() {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
            *counts.entry(v["round"].as_u64().unwrap() as u32).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

fn budget_parity() -> Outcome {
    let rounds = 3;
    let base = ExperimentConfig {
        rounds,
        budget_per_round: 250,
        mars: MarsConfig {
            max_cycles: 500,
            rounds_per_pair: 1,
            ..Default::default()
        },
        merge: MergeMode::Stored,
        ..Default::default()
    };
    let solo = ExperimentConfig {
        name: "solo".into(),
        condition: Condition::Solo,
        nodes: vec![mock("bomber", 1.0)],
        ..base.clone()
    };
    let four = ExperimentConfig {
        name: "four".into(),
        condition: Condition::Homogeneous,
        nodes: vec![mock("bomber", 1.0); 4],
        ..base
    };
    ensure!(four.iters_for(0) == 62, "4-node split gives {} per node", four.iters_for(0));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_experiment(&solo, dir.path()).map_err(|e| e.to_string())?;
    run_experiment(&four, dir.path()).map_err(|e| e.to_string())?;
    let a = calls_per_round(dir.path(), "solo")?;
    let b = calls_per_round(dir.path(), "four")?;
    for r in 1..=rounds {
        let (x, y) = (a.get(&r).copied().unwrap_or(0), b.get(&r).copied().unwrap_or(0));
        ensure!(x == 250 && y == 248, "round {r}: solo {x}, four nodes {y}");
    }
    Ok(format!("{rounds} rounds of 250 vs 248 logged calls"))
}

fn dei(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dei"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "dei {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let exp = dir.path().join("exp.json");
    fs::write(
        &exp,
        r#"{
            "name": "repeat",
            "condition": "diverse",
            "rounds": 3,
            "budget_per_round": 24,
            "nodes": [
                {"operator": {"kind": "mock", "profile": "bomber"}},
                {"operator": {"kind": "mock", "profile": "scanner", "latency_secs": 2.5}},
                {"operator": {"kind": "mock", "profile": "runner", "failure_rate": 0.1}}
            ],
            "network": {"topology": {"kind": "ring", "chords": 1}, "sim": {"drop_prob": 0.05}},
            "mars": {"max_cycles": 2000, "rounds_per_pair": 2},
            "seeds": [0, 1],
            "merge": "rescore"
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let runs = dir.path().join(run).join("runs");
        let report = dir.path().join(run).join("report");
        dei(&["sim", "--experiment", exp.to_str().unwrap(), "--out", runs.to_str().unwrap()])?;
        dei(&["report", runs.to_str().unwrap(), "--out", report.to_str().unwrap()])?;
        trees.push(tree(&dir.path().join(run)));
    }
    ensure!(trees[0].len() > 10, "only {} files written", trees[0].len());
    let names_a: Vec<_> = trees[0].keys().collect();
    let names_b: Vec<_> = trees[1].keys().collect();
    ensure!(names_a == names_b, "file sets differ");
    for (path, bytes) in &trees[0] {
        ensure!(trees[1][path] == *bytes, "{} differs", path.display());
    }
    let bytes: usize = trees[0].values().map(Vec::len).sum();
    Ok(format!("{} files, {bytes} bytes identical", trees[0].len()))
}

const PROFILES: [&str; 4] = ["bomber", "scanner", "replicator", "runner"];

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Difference of means over the pooled sample standard deviation.
fn cohens_d(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let pooled = (((a.len() - 1) as f64 * sa * sa + (b.len() - 1) as f64 * sb * sb) / (a.len() + b.len() - 2) as f64).sqrt();
    (ma - mb) / pooled
}

fn directional() -> Outcome {
    let mars = MarsConfig {
        max_cycles: 8000,
        rounds_per_pair: 8,
        ..Default::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: String, condition: Condition, profiles: Vec<&str>, seed: u64| -> Result<f64, String> {
        let cfg = ExperimentConfig {
            name,
            condition,
            rounds: 10,
            budget_per_round: 250,
            nodes: profiles.iter().map(|p| mock(p, 1.0)).collect(),
            mars: mars.clone(),
            seeds: vec![seed],
            merge: MergeMode::Stored,
            ..Default::default()
        };
        let s = run_experiment(&cfg, dir.path()).map_err(|e| e.to_string())?;
        Ok(s[0].merged_coverage)
    };
    let (mut solo, mut homog, mut diverse) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5u64 {
        // solo and homogeneous rotate through the profiles so neither is
        // tied to one bias table
        let p = PROFILES[seed as usize % 4];
        solo.push(run(format!("solo-{seed}"), Condition::Solo, vec![p], seed)?);
        homog.push(run(format!("homogeneous-{seed}"), Condition::Homogeneous, vec![p; 4], seed)?);
        diverse.push(run(format!("diverse-{seed}"), Condition::Diverse, PROFILES.to_vec(), seed)?);
    }
    let (ms, _) = mean_sd(&solo);
    let (mh, _) = mean_sd(&homog);
    let (md, _) = mean_sd(&diverse);
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "coverage means: diverse {md:.3} [{}], homogeneous {mh:.3} [{}], solo {ms:.3} [{}]; \
         diverse vs homogeneous {:+.1}% (d={:.2}), diverse vs solo {:+.1}% (d={:.2})",
        fmt(&diverse),
        fmt(&homog),
        fmt(&solo),
        100.0 * (md - mh) / mh,
        cohens_d(&diverse, &homog),
        100.0 * (md - ms) / ms,
        cohens_d(&diverse, &solo),
    );
    ensure!(md > mh && md > ms, "{detail}");
    Ok(detail)
}

fn axl_conformance() -> Outcome {
    let a_id = PeerId::from_label("acceptance-a");
    let b_id = PeerId::from_label("acceptance-b");
    let mut a = AxlShim::start(a_id, "127.0.0.1:0").map_err(|e| e.to_string())?;
    let mut b = AxlShim::start(b_id, "127.0.0.1:0").map_err(|e| e.to_string())?;
    a.add_peer(b_id, &b.url());
    b.add_peer(a_id, &a.url());
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();

    let recv = |shim: &AxlShim| -> Result<(u16, Option<String>, Vec<u8>), String> {
        let mut r = agent.get(&format!("{}/recv", shim.url())).call().map_err(|e| e.to_string())?;
        let from = r.headers().get(FROM_HEADER).map(|v| v.to_str().unwrap().to_string());
        let mut body = Vec::new();
        r.body_mut().as_reader().read_to_end(&mut body).map_err(|e| e.to_string())?;
        Ok((r.status().as_u16(), from, body))
    };
    let send = |shim: &AxlShim, to: &PeerId, body: &[u8]| -> Result<u16, String> {
        let r = agent
            .post(&format!("{}/send", shim.url()))
            .header(DESTINATION_HEADER, &to.to_string())
            .send(body)
            .map_err(|e| e.to_string())?;
        Ok(r.status().as_u16())
    };

    let (status, _, body) = recv(&a)?;
    ensure!(status == 204 && body.is_empty(), "empty queue gave {status}");

    let payload: Vec<u8> = (0..4096u32).map(|i| (i % 256) as u8).collect();
    ensure!(send(&a, &a_id, &payload)? == 200, "loopback send refused");
    let (status, from, body) = recv(&a)?;
    ensure!(status == 200, "loopback recv gave {status}");
    ensure!(from.as_deref() == Some(a_id.to_string().as_str()), "loopback sender {from:?}");
    ensure!(body == payload, "loopback payload altered");

    ensure!(send(&a, &b_id, &payload)? == 200, "send to peer refused");
    let deadline = Instant::now() + Duration::from_secs(5);
    let (status, from, body) = loop {
        let got = recv(&b)?;
        if got.0 != 204 || Instant::now() > deadline {
            break got;
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    ensure!(status == 200, "peer recv gave {status}");
    ensure!(from.as_deref() == Some(a_id.to_string().as_str()), "peer sender {from:?}");
    ensure!(body == payload, "peer payload altered");
    ensure!(recv(&b)?.0 == 204, "queue not empty after one delivery");

    let topo: Topology = serde_json::from_str(
        &agent
            .get(&format!("{}/topology", a.url()))
            .call()
            .map_err(|e| e.to_string())?
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure!(topo.our_public_key == a_id, "topology key {}", topo.our_public_key);
    ensure!(topo.peers.iter().any(|p| p.public_key == b_id), "topology lacks the peer");

    a.shutdown();
    b.shutdown();
    Ok("204 on empty, 200 with sender header, 4096-byte payload intact over loopback and peer".into())
}

const NOISE: &[u8] = b" \t\n,;:#$@*<>{}()+-/%.!=ABCDFIJLMNOPSXZabdfijmnorx0123456789";

fn parser_fuzz() -> Outcome {
    let opts = ParseOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10_000u64 {
        let bias = OperatorBias {
            wide_value_rate: rng.gen_range(0.0..1.0),
            random_modifier_rate: rng.gen_range(0.0..1.0),
            generate_length: (1, rng.gen_range(1..=100)),
            ..OperatorBias::default()
        };
        let w = random_warrior(rng.gen(), &bias, &opts);
        let back = parse_with(&serialize(&w), &opts).map_err(|e| format!("warrior {i}: {e}"))?;
        ensure!(back == w, "warrior {i} changed in the round trip");
    }
    let mut accepted = 0;
    for i in 0..10_000u64 {
        let mut text = serialize(&random_warrior(rng.gen(), &OperatorBias::default(), &opts)).into_bytes();
        for _ in 0..rng.gen_range(1..12) {
            let c = NOISE[rng.gen_range(0..NOISE.len())];
            match rng.gen_range(0..3) {
                0 if !text.is_empty() => {
                    let k = rng.gen_range(0..text.len());
                    text[k] = c;
                }
                1 => {
                    let k = rng.gen_range(0..=text.len());
                    text.insert(k, c);
                }
                _ if !text.is_empty() => {
                    let k = rng.gen_range(0..text.len());
                    text.remove(k);
                }
                _ => {}
            }
        }
        let text = String::from_utf8(text).unwrap();
        let parsed = panic::catch_unwind(|| parse_with(&text, &opts)).map_err(|_| format!("mutated input {i} panicked"))?;
        if let Ok(w) = parsed {
            accepted += 1;
            ensure!(w.validate(opts.core_size, opts.max_length).is_ok(), "mutated input {i} parsed to an invalid warrior");
        }
    }
    Ok(format!("10000 round trips; 10000 mutated inputs, {accepted} accepted, none panicked"))
}
