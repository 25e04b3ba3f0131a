use serde::{Deserialize, Serialize};

use super::{fitness, run_battle, MarsConfig, MarsError};
use crate::redcode::Warrior;
use crate::seed::{mix, mix_str};

/// Behavioral descriptor of a warrior, averaged over an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehavioralCharacteristic {
    /// Time-space product: code length times mean lifespan.
    pub tsp: f64,
    /// Memory coverage: mean fraction of the core read, written or executed.
    pub mc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub bc: BehavioralCharacteristic,
}

/// Sums over the battles of one warrior against one opponent. Adding the
/// stats of several opponents and calling [`PairStats::evaluation`] equals
/// evaluating against all of them at once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub battles: u32,
    pub fitness_sum: f64,
    pub lifespan_sum: u64,
    pub touched_sum: u64,
}

impl PairStats {
    pub fn merge(&mut self, other: &PairStats) {
        self.battles += other.battles;
        self.fitness_sum += other.fitness_sum;
        self.lifespan_sum += other.lifespan_sum;
        self.touched_sum += other.touched_sum;
    }

    pub fn evaluation(&self, length: usize, core_size: u32) -> Evaluation {
        if self.battles == 0 {
            return Evaluation {
                fitness: 0.0,
                bc: BehavioralCharacteristic { tsp: 0.0, mc: 0.0 },
            };
        }
        let battles = f64::from(self.battles);
        Evaluation {
            fitness: self.fitness_sum / battles,
            bc: BehavioralCharacteristic {
                tsp: length as f64 * self.lifespan_sum as f64 / battles,
                mc: self.touched_sum as f64 / (battles * f64::from(core_size)),
            },
        }
    }
}

/// Seed of battle `round` between any warrior and `opponent`. It does not
/// depend on the evaluated warrior, so every candidate meets an opponent on
/// the same placements.
pub fn pair_seed(seed: u64, opponent: &Warrior, round: u32) -> u64 {
    mix(mix_str(seed, &opponent.content_hash()), u64::from(round))
}

/// `rounds_per_pair` one-on-one battles of `w` against `opponent`. The
/// evaluated warrior moves first in even rounds and second in odd ones.
pub fn evaluate_pair(w: &Warrior, opponent: &Warrior, cfg: &MarsConfig, seed: u64) -> Result<PairStats, MarsError> {
    let mut stats = PairStats::default();
    let base = mix_str(seed, &opponent.content_hash());
    for round in 0..cfg.rounds_per_pair {
        let battle_seed = mix(base, u64::from(round));
        let (pair, me) = if round % 2 == 0 {
            ([w.clone(), opponent.clone()], 0)
        } else {
            ([opponent.clone(), w.clone()], 1)
        };
        let outcome = run_battle(&pair, cfg, battle_seed)?;
        stats.battles += 1;
        stats.fitness_sum += fitness(me, &outcome);
        stats.lifespan_sum += u64::from(outcome.lifespan(me));
        stats.touched_sum += outcome.warriors[me].touched.len() as u64;
    }
    Ok(stats)
}

/// Mean fitness and BC of `w` over `rounds_per_pair` battles against each
/// opponent.
pub fn evaluate(w: &Warrior, opponents: &[Warrior], cfg: &MarsConfig, seed: u64) -> Result<Evaluation, MarsError> {
    if opponents.is_empty() {
        return Err(MarsError::EmptyPool);
    }
    let mut total = PairStats::default();
    for opponent in opponents {
        total.merge(&evaluate_pair(w, opponent, cfg, seed)?);
    }
    Ok(total.evaluation(w.len(), cfg.core_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchRecord {
    pub wins: u32,
    pub losses: u32,
    pub ties: u32,
}

/// Round-by-round record of `w` against `h`: a win when `w` is the sole
/// survivor, a loss when `h` is, a tie otherwise.
pub fn match_record(w: &Warrior, h: &Warrior, cfg: &MarsConfig, seed: u64) -> Result<MatchRecord, MarsError> {
    let mut record = MatchRecord::default();
    let base = mix_str(seed, &h.content_hash());
    for round in 0..cfg.rounds_per_pair {
        let battle_seed = mix(base, u64::from(round));
        let (pair, me) = if round % 2 == 0 {
            ([w.clone(), h.clone()], 0)
        } else {
            ([h.clone(), w.clone()], 1)
        };
        let outcome = run_battle(&pair, cfg, battle_seed)?;
        let survivors = outcome.survivors();
        match survivors.as_slice() {
            [only] if *only == me => record.wins += 1,
            [_] => record.losses += 1,
            _ => record.ties += 1,
        }
    }
    Ok(record)
}

/// True iff `w` wins at least as many rounds against `h` as it loses.
pub fn win_tie(w: &Warrior, h: &Warrior, cfg: &MarsConfig, seed: u64) -> Result<bool, MarsError> {
    let record = match_record(w, h, cfg, seed)?;
    Ok(record.wins >= record.losses)
}
