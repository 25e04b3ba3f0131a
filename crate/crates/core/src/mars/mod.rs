//! Deterministic Core War battles, survival-share fitness and the two
//! behavioral descriptors (time-space product and memory coverage).

mod config;
mod eval;
mod fitness;
mod vm;

pub use config::MarsConfig;
pub use eval::{
    evaluate, evaluate_pair, match_record, pair_seed, win_tie, BehavioralCharacteristic, Evaluation, MatchRecord,
    PairStats,
};
pub use fitness::fitness;
pub use vm::{run_battle, run_battle_traced, BattleOutcome, CellSet, TraceEvent, WarriorResult};

use crate::redcode::InvalidWarrior;

#[derive(Debug, thiserror::Error)]
pub enum MarsError {
    #[error("invalid MARS configuration: {0}")]
    Config(String),
    #[error("cannot place warriors: {0}")]
    Placement(String),
    #[error("warrior {index} is invalid: {source}")]
    InvalidWarrior {
        index: usize,
        #[source]
        source: InvalidWarrior,
    },
    #[error("opponent pool is empty")]
    EmptyPool,
}
