//! Deterministic discrete-event network for in-process nodes. Frames are
//! passed as values; each directed link delivers in FIFO order after a
//! random latency. Everything random comes from one seeded generator, so a
//! seed fixes latencies, drops, mesh choices and event order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::wire::Frame;
use crate::{GossipConfig, GossipEngine, GossipError, GossipMessage, MessageId, Outbound, PeerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub latency_min_ms: f64,
    pub latency_max_ms: f64,
    /// Independent per-frame loss probability.
    pub drop_prob: f64,
    pub gossip: GossipConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            latency_min_ms: 5.0,
            latency_max_ms: 50.0,
            drop_prob: 0.0,
            gossip: GossipConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), GossipError> {
        if !(0.0 <= self.latency_min_ms && self.latency_min_ms <= self.latency_max_ms) {
            return Err(GossipError::Config("need 0 <= latency_min_ms <= latency_max_ms".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(GossipError::Config("drop_prob outside [0, 1]".into()));
        }
        self.gossip.validate()
    }
}

/// First arrival of a message at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub at: Duration,
    /// Forwarding hops from the publisher.
    pub hops: u32,
}

#[derive(Debug)]
enum EventKind {
    Deliver { from: usize, to: usize, frame: Frame, hops: u32 },
    Heartbeat { node: usize },
}

#[derive(Debug)]
struct Event {
    at: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // min-heap on (time, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct SimNode {
    engine: GossipEngine,
    online: bool,
    links: BTreeSet<usize>,
}

pub struct SimNetwork {
    config: SimConfig,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Event>,
    nodes: Vec<SimNode>,
    index: HashMap<PeerId, usize>,
    /// Latest scheduled arrival per directed link, for FIFO order.
    link_clock: HashMap<(usize, usize), u64>,
    deliveries: HashMap<MessageId, HashMap<usize, Delivery>>,
    published: Vec<(MessageId, usize, Duration)>,
    frames_sent: u64,
    frames_dropped: u64,
}

fn nanos(d: Duration) -> u64 {
    d.as_nanos() as u64
}

impl SimNetwork {
    pub fn new(config: SimConfig, seed: u64) -> Self {
        SimNetwork {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::new(),
            index: HashMap::new(),
            link_clock: HashMap::new(),
            deliveries: HashMap::new(),
            published: Vec::new(),
            frames_sent: 0,
            frames_dropped: 0,
        }
    }

    /// `n` nodes with random identities, heartbeats at random phases.
    pub fn with_nodes(config: SimConfig, seed: u64, n: usize) -> Self {
        let mut sim = SimNetwork::new(config, seed);
        for _ in 0..n {
            sim.add_node();
        }
        sim
    }

    pub fn add_node(&mut self) -> usize {
        let id = PeerId::random(&mut self.rng);
        let engine_seed = self.rng.next_u64();
        let i = self.nodes.len();
        self.nodes.push(SimNode {
            engine: GossipEngine::new(id, self.config.gossip.clone(), engine_seed),
            online: true,
            links: BTreeSet::new(),
        });
        self.index.insert(id, i);
        let hb = nanos(self.config.gossip.heartbeat());
        let phase = self.rng.gen_range(0..hb.max(1));
        self.schedule(self.now + phase, EventKind::Heartbeat { node: i });
        i
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn now(&self) -> Duration {
        Duration::from_nanos(self.now)
    }

    pub fn peer_id(&self, node: usize) -> PeerId {
        self.nodes[node].engine.local()
    }

    pub fn engine(&self, node: usize) -> &GossipEngine {
        &self.nodes[node].engine
    }

    pub fn is_online(&self, node: usize) -> bool {
        self.nodes[node].online
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn frames_dropped(&self) -> u64 {
        self.frames_dropped
    }

    fn schedule(&mut self, at: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event { at, seq: self.seq, kind });
    }

    fn hops_at(&self, node: usize, id: &MessageId) -> u32 {
        self.deliveries
            .get(id)
            .and_then(|m| m.get(&node))
            .map_or(0, |d| d.hops)
    }

    fn send(&mut self, from: usize, out: Vec<Outbound>) {
        for Outbound { to, frame } in out {
            let Some(&to) = self.index.get(&to) else {
                log::warn!("sim: node {from} addressed unknown peer {}", to.short());
                continue;
            };
            if !self.nodes[from].links.contains(&to) {
                continue;
            }
            self.frames_sent += 1;
            if self.config.drop_prob > 0.0 && self.rng.gen_bool(self.config.drop_prob) {
                self.frames_dropped += 1;
                continue;
            }
            let hops = match &frame {
                Frame::Message(m) => self.hops_at(from, &m.id) + 1,
                _ => 0,
            };
            let latency_ms = if self.config.latency_max_ms > self.config.latency_min_ms {
                self.rng.gen_range(self.config.latency_min_ms..self.config.latency_max_ms)
            } else {
                self.config.latency_min_ms
            };
            let clock = self.link_clock.entry((from, to)).or_insert(0);
            let at = (self.now + (latency_ms * 1e6) as u64).max(*clock);
            *clock = at;
            self.schedule(at, EventKind::Deliver { from, to, frame, hops });
        }
    }

    /// Bidirectional link; both engines learn about each other.
    pub fn connect(&mut self, a: usize, b: usize) {
        if a == b || self.nodes[a].links.contains(&b) {
            return;
        }
        self.nodes[a].links.insert(b);
        self.nodes[b].links.insert(a);
        if self.nodes[a].online && self.nodes[b].online {
            self.link_up(a, b);
        }
    }

    fn link_up(&mut self, a: usize, b: usize) {
        let (pa, pb) = (self.peer_id(a), self.peer_id(b));
        let out = self.nodes[a].engine.add_peer(pb);
        self.send(a, out);
        let out = self.nodes[b].engine.add_peer(pa);
        self.send(b, out);
    }

    /// A ring over all nodes plus `chords` random extra links per node.
    pub fn connect_ring_with_chords(&mut self, chords: usize) {
        let n = self.nodes.len();
        if n < 2 {
            return;
        }
        for i in 0..n {
            self.connect(i, (i + 1) % n);
        }
        for i in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.shuffle(&mut self.rng);
            for &j in others.iter().take(chords) {
                self.connect(i, j);
            }
        }
    }

    pub fn connect_all(&mut self) {
        let n = self.nodes.len();
        for a in 0..n {
            for b in a + 1..n {
                self.connect(a, b);
            }
        }
    }

    pub fn subscribe(&mut self, node: usize, topic: &str) {
        let out = self.nodes[node].engine.subscribe(topic);
        self.send(node, out);
    }

    pub fn subscribe_all(&mut self, topic: &str) {
        for i in 0..self.nodes.len() {
            self.subscribe(i, topic);
        }
    }

    pub fn publish(&mut self, node: usize, topic: &str, payload: Vec<u8>) -> Result<MessageId, GossipError> {
        if !self.nodes[node].online {
            return Err(GossipError::TransportDown);
        }
        let now = self.now();
        let (id, out) = self.nodes[node].engine.publish(topic, payload, now)?;
        self.deliveries.entry(id).or_default().insert(node, Delivery { at: now, hops: 0 });
        self.published.push((id, node, now));
        self.send(node, out);
        Ok(id)
    }

    pub fn drain(&mut self, node: usize) -> Vec<GossipMessage> {
        self.nodes[node].engine.drain()
    }

    /// Take a node off the network. Frames in flight to or from it are lost
    /// and its neighbours forget it until it comes back.
    pub fn set_offline(&mut self, node: usize) {
        if !self.nodes[node].online {
            return;
        }
        self.nodes[node].online = false;
        let me = self.peer_id(node);
        let links: Vec<usize> = self.nodes[node].links.iter().copied().collect();
        for j in links {
            let pj = self.peer_id(j);
            self.nodes[j].engine.remove_peer(&me);
            self.nodes[node].engine.remove_peer(&pj);
        }
    }

    pub fn set_online(&mut self, node: usize) {
        if self.nodes[node].online {
            return;
        }
        self.nodes[node].online = true;
        let links: Vec<usize> = self.nodes[node].links.iter().copied().collect();
        for j in links {
            if self.nodes[j].online {
                self.link_up(node, j);
            }
        }
    }

    /// Process every event up to and including `until`, then set the clock
    /// to `until`.
    pub fn run_until(&mut self, until: Duration) {
        let until = nanos(until);
        while self.queue.peek().is_some_and(|e| e.at <= until) {
            let event = self.queue.pop().expect("peeked");
            self.now = self.now.max(event.at);
            self.dispatch(event.kind);
        }
        self.now = self.now.max(until);
    }

    pub fn run_for(&mut self, span: Duration) {
        let until = self.now() + span;
        self.run_until(until);
    }

    fn dispatch(&mut self, kind: EventKind) {
        let now = self.now();
        match kind {
            EventKind::Heartbeat { node } => {
                let next = self.now + nanos(self.config.gossip.heartbeat());
                self.schedule(next, EventKind::Heartbeat { node });
                if self.nodes[node].online {
                    let out = self.nodes[node].engine.heartbeat(now);
                    self.send(node, out);
                }
            }
            EventKind::Deliver { from, to, frame, hops } => {
                if !self.nodes[from].online || !self.nodes[to].online {
                    return;
                }
                let message_id = match &frame {
                    Frame::Message(m) => Some(m.id),
                    _ => None,
                };
                let before = self.nodes[to].engine.stats().delivered;
                let sender = self.peer_id(from);
                let out = self.nodes[to].engine.handle(sender, frame, now);
                if let Some(id) = message_id {
                    if self.nodes[to].engine.stats().delivered > before {
                        self.deliveries.entry(id).or_default().insert(to, Delivery { at: now, hops });
                    }
                }
                self.send(to, out);
            }
        }
    }

    /// First arrival of `id` at `node`; the publisher counts at hop 0.
    pub fn delivery(&self, id: &MessageId, node: usize) -> Option<Delivery> {
        self.deliveries.get(id).and_then(|m| m.get(&node)).copied()
    }

    /// Messages published so far: id, publishing node, time.
    pub fn published(&self) -> &[(MessageId, usize, Duration)] {
        &self.published
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: &str = "dei/champions";

    fn net(n: usize, seed: u64) -> SimNetwork {
        let mut sim = SimNetwork::with_nodes(SimConfig::default(), seed, n);
        sim.connect_ring_with_chords(1);
        sim.subscribe_all(T);
        sim.run_for(Duration::from_secs(3));
        sim
    }

    #[test]
    fn fully_connected_four_reach_in_one_hop() {
        let mut sim = SimNetwork::with_nodes(SimConfig::default(), 3, 4);
        sim.connect_all();
        sim.subscribe_all(T);
        sim.run_for(Duration::from_millis(500));
        assert_eq!(sim.engine(0).mesh(T).len(), 3);
        let t0 = sim.now();
        let id = sim.publish(0, T, b"c".to_vec()).unwrap();
        sim.run_for(Duration::from_millis(100));
        for n in 1..4 {
            // the direct push lands within one link latency, whichever copy wins
            assert!(sim.delivery(&id, n).unwrap().at - t0 <= Duration::from_millis(50));
            assert_eq!(sim.drain(n).len(), 1);
        }
    }

    #[test]
    fn same_payload_twice_is_two_messages() {
        let mut sim = net(5, 1);
        let a = sim.publish(0, T, b"same".to_vec()).unwrap();
        let b = sim.publish(0, T, b"same".to_vec()).unwrap();
        assert_ne!(a, b);
        sim.run_for(Duration::from_secs(5));
        for n in 1..5 {
            assert_eq!(sim.drain(n).len(), 2);
        }
    }

    #[test]
    fn offline_publish_is_transport_down() {
        let mut sim = net(3, 2);
        sim.set_offline(1);
        assert!(matches!(sim.publish(1, T, vec![1]), Err(GossipError::TransportDown)));
    }

    #[test]
    fn simulation_is_deterministic() {
        let trace = |seed| {
            let mut sim = net(8, seed);
            let mut out = Vec::new();
            for k in 0..5u8 {
                let id = sim.publish(k as usize, T, vec![k]).unwrap();
                sim.run_for(Duration::from_millis(700));
                out.push(id);
            }
            sim.run_for(Duration::from_secs(5));
            let mut times = Vec::new();
            for id in &out {
                for n in 0..8 {
                    times.push(sim.delivery(id, n));
                }
            }
            (times, sim.frames_sent())
        };
        assert_eq!(trace(11), trace(11));
        assert_ne!(trace(11), trace(12));
    }

    #[test]
    fn rejoining_node_recovers_missed_messages() {
        let mut sim = net(8, 5);
        sim.set_offline(3);
        let ids: Vec<MessageId> = (0..5)
            .map(|k| {
                let id = sim.publish(0, T, vec![k]).unwrap();
                sim.run_for(Duration::from_secs(2));
                id
            })
            .collect();
        assert!(ids.iter().all(|id| sim.delivery(id, 3).is_none()));
        sim.set_online(3);
        sim.run_for(Duration::from_secs(5));
        assert!(ids.iter().all(|id| sim.delivery(id, 3).is_some()));
        assert_eq!(sim.drain(3).len(), 5);
    }

    #[test]
    fn links_are_fifo() {
        let mut sim = net(2, 9);
        let ids: Vec<MessageId> = (0..20u8).map(|k| sim.publish(0, T, vec![k]).unwrap()).collect();
        sim.run_for(Duration::from_secs(1));
        let got: Vec<MessageId> = sim.drain(1).iter().map(|m| m.id).collect();
        assert_eq!(got, ids);
    }
}
