use std::collections::HashMap;

use crate::mars::{evaluate_pair, Evaluation, MarsConfig, MarsError, PairStats};
use crate::redcode::Warrior;

/// Memoized evaluation under one fixed battle seed. Pair results depend
/// only on the two programs, the configuration and the seed, so they stay
/// valid for the whole run.
#[derive(Debug)]
pub struct Evaluator {
    mars: MarsConfig,
    seed: u64,
    pairs: HashMap<(String, String), PairStats>,
    hits: u64,
    misses: u64,
}

/// Entries kept before the cache is flushed; bounds memory on long runs.
const MAX_ENTRIES: usize = 1 << 20;

impl Evaluator {
    pub fn new(mars: MarsConfig, seed: u64) -> Self {
        Evaluator {
            mars,
            seed,
            pairs: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn mars(&self) -> &MarsConfig {
        &self.mars
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean fitness and BC of `w` against every `(hash, opponent)`.
    pub fn evaluate(&mut self, w: &Warrior, opponents: &[(String, Warrior)]) -> Result<Evaluation, MarsError> {
        if opponents.is_empty() {
            return Err(MarsError::EmptyPool);
        }
        let w_hash = w.content_hash();
        let mut total = PairStats::default();
        for (o_hash, opponent) in opponents {
            let key = (w_hash.clone(), o_hash.clone());
            let stats = match self.pairs.get(&key) {
                Some(stats) => {
                    self.hits += 1;
                    *stats
                }
                None => {
                    self.misses += 1;
                    let stats = evaluate_pair(w, opponent, &self.mars, self.seed)?;
                    if self.pairs.len() >= MAX_ENTRIES {
                        self.pairs.clear();
                    }
                    self.pairs.insert(key, stats);
                    stats
                }
            };
            total.merge(&stats);
        }
        Ok(total.evaluation(w.len(), self.mars.core_size))
    }

    /// (hits, misses) so far.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mars::evaluate;
    use crate::redcode::parse;

    #[test]
    fn cached_results_equal_direct_evaluation() {
        let cfg = MarsConfig {
            max_cycles: 2000,
            rounds_per_pair: 4,
            ..Default::default()
        };
        let pool: Vec<Warrior> = ["MOV 0, 1", "ADD #4, 3\nMOV 2, @2\nJMP -2\nDAT #0, #0"]
            .iter()
            .map(|s| parse(s).unwrap())
            .collect();
        let keyed: Vec<(String, Warrior)> = pool.iter().map(|w| (w.content_hash(), w.clone())).collect();
        let mut ev = Evaluator::new(cfg.clone(), 11);
        let w = parse("SPL 0\nMOV 0, 1").unwrap();
        let direct = evaluate(&w, &pool, &cfg, 11).unwrap();
        assert_eq!(ev.evaluate(&w, &keyed).unwrap(), direct);
        assert_eq!(ev.evaluate(&w, &keyed).unwrap(), direct);
        assert_eq!(ev.stats(), (2, 2));
    }
}
