use super::BattleOutcome;

/// Survival-share fitness of warrior `i`:
///
/// `f_i = sum over timesteps t of (N / T) * A_i(t) / sum_o A_o(t)`
///
/// The denominator runs over every participant, `i` included, and
/// timesteps where nobody is alive contribute nothing. The result lies in
/// `[0, N]`.
///
/// Alive masks are monotone, so the sum is taken over the constant
/// stretches between consecutive deaths rather than timestep by timestep.
pub fn fitness(i: usize, outcome: &BattleOutcome) -> f64 {
    let total = outcome.max_cycles;
    let n = outcome.n_warriors();
    if total == 0 || n == 0 {
        return 0.0;
    }
    // first dead timestep of each warrior, total + 1 for survivors
    let ends: Vec<u32> = outcome
        .warriors
        .iter()
        .map(|w| w.death_cycle.unwrap_or(total + 1).min(total + 1))
        .collect();
    let my_end = ends[i];
    let mut boundaries: Vec<u32> = ends.iter().copied().filter(|&e| e <= my_end).collect();
    boundaries.push(1);
    boundaries.sort_unstable();
    boundaries.dedup();

    let mut sum = 0.0;
    for pair in boundaries.windows(2) {
        let (from, to) = (pair[0], pair[1]);
        // timesteps from..to, all with the same set of live warriors
        let alive = ends.iter().filter(|&&e| e > from).count();
        if alive > 0 && from < my_end {
            sum += f64::from(to - from) / alive as f64;
        }
    }
    n as f64 / f64::from(total) * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mars::{CellSet, WarriorResult};

    fn outcome(total: u32, deaths: &[Option<u32>]) -> BattleOutcome {
        BattleOutcome {
            max_cycles: total,
            cycles_run: total,
            core_size: 8000,
            warriors: deaths
                .iter()
                .map(|&d| WarriorResult {
                    death_cycle: d,
                    touched: CellSet::new(8),
                    length: 1,
                    load_address: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn both_alive_throughout_scores_one_each() {
        let o = outcome(80_000, &[None, None]);
        assert_eq!(fitness(0, &o), 1.0);
        assert_eq!(fitness(1, &o), 1.0);
    }

    #[test]
    fn dead_from_the_first_timestep_scores_zero() {
        let o = outcome(100, &[Some(1), None]);
        assert_eq!(fitness(0, &o), 0.0);
        assert_eq!(fitness(1, &o), 2.0);
    }

    #[test]
    fn opponent_dying_halfway_gives_one_and_a_half() {
        // opponent alive for timesteps 1..=50, dead from 51
        let o = outcome(100, &[None, Some(51)]);
        assert!((fitness(0, &o) - 1.5).abs() < 1e-12);
        assert!((fitness(1, &o) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_dead_timesteps_contribute_nothing() {
        let o = outcome(10, &[Some(6), Some(6)]);
        assert!((fitness(0, &o) - 0.5).abs() < 1e-12);
        assert!(fitness(0, &o) + fitness(1, &o) < 2.0);
    }
}
