//! Canned measurements over [`SimNetwork`]: propagation delay, recovery
//! after churn, and forwarding depth. Tests and the CLI share them.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::sim::{SimConfig, SimNetwork};
use crate::MessageId;

pub const TOPIC: &str = "dei/bench";

/// Time for the meshes to form before traffic starts.
const WARMUP: Duration = Duration::from_secs(3);

fn network(config: &SimConfig, seed: u64, n: usize, chords: usize) -> SimNetwork {
    let mut sim = SimNetwork::with_nodes(config.clone(), seed, n);
    sim.connect_ring_with_chords(chords);
    sim.subscribe_all(TOPIC);
    sim.run_for(WARMUP);
    sim
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Tally {
    pub hits: u64,
    pub total: u64,
}

impl Tally {
    pub fn add(&mut self, other: Tally) {
        self.hits += other.hits;
        self.total += other.total;
    }

    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.hits as f64 / self.total as f64
    }
}

/// Publish `messages` from random nodes, `gap` apart, on a ring with
/// `chords` random extra links per node. A hit is a message that reached
/// every node within `deadline` of its publication.
pub fn propagation(config: &SimConfig, seed: u64, n: usize, chords: usize, messages: usize, gap: Duration, deadline: Duration) -> Tally {
    let mut sim = network(config, seed, n, chords);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut sent: Vec<(MessageId, Duration)> = Vec::with_capacity(messages);
    for k in 0..messages {
        let from = rng.gen_range(0..n);
        let at = sim.now();
        let id = sim
            .publish(from, TOPIC, (k as u32).to_be_bytes().to_vec())
            .expect("bench nodes stay online");
        sent.push((id, at));
        sim.run_for(gap);
    }
    sim.run_for(deadline);
    let hits = sent
        .iter()
        .filter(|(id, at)| (0..n).all(|node| sim.delivery(id, node).is_some_and(|d| d.at - *at <= deadline)))
        .count();
    Tally {
        hits: hits as u64,
        total: messages as u64,
    }
}

/// `churned` of the `n` nodes go offline together for `absence` while the
/// rest keep publishing, then rejoin. A hit is a (message, churned node)
/// pair where the node holds the message `settle` after rejoining. Only
/// messages still inside the mcache TTL at rejoin time are counted.
#[allow(clippy::too_many_arguments)]
pub fn churn_recovery(
    config: &SimConfig,
    seed: u64,
    n: usize,
    chords: usize,
    churned: usize,
    gap: Duration,
    absence: Duration,
    settle: Duration,
) -> Tally {
    assert!(churned < n, "at least one node must stay online");
    let mut sim = network(config, seed, n, chords);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc4u64);
    let victims = rand::seq::index::sample(&mut rng, n, churned).into_vec();
    let online: Vec<usize> = (0..n).filter(|i| !victims.contains(i)).collect();
    sim.run_for(Duration::from_secs(5));
    for &v in &victims {
        sim.set_offline(v);
    }
    let left = sim.now();
    let mut missed: Vec<(MessageId, Duration)> = Vec::new();
    let mut k = 0u32;
    while sim.now() - left < absence {
        let from = online[rng.gen_range(0..online.len())];
        let at = sim.now();
        let id = sim.publish(from, TOPIC, k.to_be_bytes().to_vec()).expect("online publisher");
        missed.push((id, at));
        k += 1;
        sim.run_for(gap);
    }
    for &v in &victims {
        sim.set_online(v);
    }
    let back = sim.now();
    sim.run_for(settle);
    let ttl = Duration::from_secs_f64(config.gossip.mcache_ttl_secs);
    let eligible: Vec<&(MessageId, Duration)> = missed.iter().filter(|(_, at)| back - *at < ttl).collect();
    let hits = eligible
        .iter()
        .map(|(id, _)| victims.iter().filter(|&&v| sim.delivery(id, v).is_some()).count())
        .sum::<usize>();
    Tally {
        hits: hits as u64,
        total: (eligible.len() * victims.len()) as u64,
    }
}

/// Largest forwarding depth of one fresh message over all nodes, or `None`
/// if some node never received it within `deadline`.
pub fn max_hops(config: &SimConfig, seed: u64, n: usize, chords: usize, deadline: Duration) -> Option<u32> {
    let mut sim = network(config, seed, n, chords);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x40b5);
    let id = sim.publish(rng.gen_range(0..n), TOPIC, b"hop".to_vec()).expect("online");
    sim.run_for(deadline);
    (0..n).map(|node| sim.delivery(&id, node).map(|d| d.hops)).try_fold(0, |acc, h| h.map(|h| acc.max(h)))
}
