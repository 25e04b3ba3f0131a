//! The per-node round loop: propose warriors with a mutation operator,
//! evaluate them against a frozen opponent pool, keep the best per niche,
//! then publish a champion and absorb the champions of peers.

mod cache;
mod node;
mod pool;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::archive::Cell;
use crate::mars::{BehavioralCharacteristic, MarsError};
use crate::mutation::{MutationError, OperatorSpec, PromptMode};
use crate::redcode::Warrior;

pub use cache::Evaluator;
pub use node::Node;
pub use pool::OpponentPool;

pub const DEFAULT_TOPIC: &str = "dei/champions";

#[derive(Debug, thiserror::Error)]
pub enum DrqError {
    #[error("invalid node configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mars(#[from] MarsError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed champion payload: {0}")]
    Payload(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub node_id: String,
    pub operator: OperatorSpec,
    pub rounds: u32,
    pub iters_per_round: u32,
    /// Probability of a fresh generation instead of a mutation.
    pub p_new: f64,
    /// Own champions kept in the pool; `null` keeps every one.
    pub champion_window: Option<usize>,
    pub topic: String,
    pub rng_seed: u64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            node_id: "node-0".into(),
            operator: OperatorSpec::mock("uniform"),
            rounds: 10,
            iters_per_round: 250,
            p_new: 0.1,
            champion_window: Some(5),
            topic: DEFAULT_TOPIC.into(),
            rng_seed: 0,
        }
    }
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), DrqError> {
        if !(0.0..=1.0).contains(&self.p_new) {
            return Err(DrqError::Config(format!("p_new {} outside [0, 1]", self.p_new)));
        }
        if self.rounds == 0 || self.iters_per_round == 0 {
            return Err(DrqError::Config("rounds and iters_per_round must be at least 1".into()));
        }
        if self.node_id.is_empty() {
            return Err(DrqError::Config("node_id must not be empty".into()));
        }
        Ok(())
    }
}

/// A round winner as published to peers. Its JSON form is the gossip
/// payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Champion {
    pub node_id: String,
    pub round: u32,
    pub fitness: f64,
    pub bc: BehavioralCharacteristic,
    pub hash: String,
    pub warrior: Warrior,
}

impl Champion {
    pub fn new(node_id: &str, round: u32, fitness: f64, bc: BehavioralCharacteristic, warrior: Warrior) -> Self {
        Champion {
            node_id: node_id.to_string(),
            round,
            fitness,
            bc,
            hash: warrior.content_hash(),
            warrior,
        }
    }

    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("champion serializes")
    }

    /// Parses a payload and checks the hash against the program.
    pub fn from_payload(bytes: &[u8]) -> Result<Self, DrqError> {
        let c: Champion = serde_json::from_slice(bytes).map_err(|e| DrqError::Payload(e.to_string()))?;
        if c.warrior.content_hash() != c.hash {
            return Err(DrqError::Payload(format!("hash mismatch for champion of {}", c.node_id)));
        }
        Ok(c)
    }
}

/// How a node exchanges champions with its peers.
pub trait ChampionChannel {
    /// Hand a champion to the transport without waiting for delivery.
    fn publish(&mut self, champion: &Champion) -> Result<(), DrqError>;

    /// Everything received since the last drain, in arrival order.
    fn drain(&mut self) -> Vec<Champion>;
}

/// No peers: publishing goes nowhere and nothing arrives.
#[derive(Debug, Default)]
pub struct SoloChannel {
    pub published: Vec<Champion>,
}

impl ChampionChannel for SoloChannel {
    fn publish(&mut self, champion: &Champion) -> Result<(), DrqError> {
        self.published.push(champion.clone());
        Ok(())
    }

    fn drain(&mut self) -> Vec<Champion> {
        Vec::new()
    }
}

/// Serves pre-recorded received sets, one per drain.
#[derive(Debug, Default)]
pub struct ReplayChannel {
    pub rounds: VecDeque<Vec<Champion>>,
    pub published: Vec<Champion>,
}

impl ChampionChannel for ReplayChannel {
    fn publish(&mut self, champion: &Champion) -> Result<(), DrqError> {
        self.published.push(champion.clone());
        Ok(())
    }

    fn drain(&mut self) -> Vec<Champion> {
        self.rounds.pop_front().unwrap_or_default()
    }
}

/// One operator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub node_id: String,
    pub round: u32,
    pub iter: u32,
    pub mode: PromptMode,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bc: Option<BehavioralCharacteristic>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<Cell>,
    pub accepted: bool,
    /// Operator latency charged for this call, in seconds.
    pub latency_secs: f64,
}

/// Summary line of one round, as written to `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub node_id: String,
    pub round: u32,
    pub champion_hash: Option<String>,
    pub champion_fitness: Option<f64>,
    pub champion_bc: Option<BehavioralCharacteristic>,
    pub coverage: f64,
    pub qd_score: f64,
    pub niche_novelty: Option<f64>,
    pub received: usize,
    pub seeded: usize,
    pub pool_size: usize,
    pub calls_used: u32,
    pub calls_total: u64,
    pub failures: u32,
    pub accepted: u32,
    /// Simulated seconds at which the round started and finished, when a
    /// simulator drives the node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_end: Option<f64>,
}

/// Result of a round's operator calls, before champion selection.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub round: u32,
    pub calls: Vec<CallRecord>,
    /// Sum of operator latencies over the round's calls.
    pub busy_secs: f64,
}
