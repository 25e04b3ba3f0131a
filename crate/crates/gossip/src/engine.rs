//! Transport-independent protocol state machine. Every entry point takes
//! the current time and returns the frames to send; the caller owns I/O.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::wire::{ControlMessage, Frame, MAX_IDS_PER_FRAME};
use crate::{GossipMessage, MessageId, PeerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GossipConfig {
    /// Target mesh degree.
    pub d: usize,
    /// Mesh size above which the heartbeat prunes back to `d`.
    pub d_high: usize,
    /// Non-mesh peers sent an IHAVE digest per topic per heartbeat.
    pub gossip_factor: usize,
    pub heartbeat_secs: f64,
    /// How long full messages stay available for IWANT.
    pub mcache_ttl_secs: f64,
    /// How long a message id is remembered for de-duplication.
    pub seen_ttl_secs: f64,
    pub max_message_size: usize,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig {
            d: 3,
            d_high: 5,
            gossip_factor: 2,
            heartbeat_secs: 1.0,
            mcache_ttl_secs: 120.0,
            seen_ttl_secs: 600.0,
            max_message_size: 64 * 1024,
        }
    }
}

impl GossipConfig {
    pub fn validate(&self) -> Result<(), GossipError> {
        if self.d == 0 || self.d_high < self.d {
            return Err(GossipError::Config(format!("need 1 <= d <= d_high, got d={} d_high={}", self.d, self.d_high)));
        }
        if !(self.heartbeat_secs > 0.0) {
            return Err(GossipError::Config("heartbeat_secs must be positive".into()));
        }
        if self.seen_ttl_secs < self.mcache_ttl_secs {
            return Err(GossipError::Config("seen_ttl_secs must be at least mcache_ttl_secs".into()));
        }
        Ok(())
    }

    pub fn heartbeat(&self) -> Duration {
        Duration::from_secs_f64(self.heartbeat_secs)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GossipError {
    #[error("not subscribed to topic {0:?}")]
    NotSubscribed(String),
    #[error("payload of {size} bytes exceeds the {max}-byte limit")]
    TooLarge { size: usize, max: usize },
    #[error("transport is down")]
    TransportDown,
    #[error("invalid gossip configuration: {0}")]
    Config(String),
}

/// Messages waiting for the application. Producers are transport threads;
/// the node loop is the single consumer.
#[derive(Debug, Default)]
pub struct ReceiveBuffer {
    queue: Mutex<VecDeque<GossipMessage>>,
}

impl ReceiveBuffer {
    pub fn push(&self, m: GossipMessage) {
        self.queue.lock().expect("receive buffer lock").push_back(m);
    }

    /// Remove and return everything buffered, in arrival order.
    pub fn drain(&self) -> Vec<GossipMessage> {
        std::mem::take(&mut *self.queue.lock().expect("receive buffer lock")).into()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("receive buffer lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: PeerId,
    pub frame: Frame,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineStats {
    pub published: u64,
    pub delivered: u64,
    pub duplicates: u64,
    pub forwarded: u64,
    pub iwant_sent: u64,
    pub iwant_served: u64,
}

/// Time-ordered id cache with expiry.
#[derive(Debug, Default)]
struct TimeCache {
    order: VecDeque<(Duration, MessageId)>,
    entries: HashSet<MessageId>,
}

impl TimeCache {
    fn insert(&mut self, id: MessageId, now: Duration) -> bool {
        if !self.entries.insert(id) {
            return false;
        }
        self.order.push_back((now, id));
        true
    }

    fn contains(&self, id: &MessageId) -> bool {
        self.entries.contains(id)
    }

    fn expire(&mut self, now: Duration, ttl: Duration) -> Vec<MessageId> {
        let mut gone = Vec::new();
        while let Some(&(at, id)) = self.order.front() {
            if now.saturating_sub(at) < ttl {
                break;
            }
            self.order.pop_front();
            self.entries.remove(&id);
            gone.push(id);
        }
        gone
    }
}

pub struct GossipEngine {
    local: PeerId,
    config: GossipConfig,
    rng: ChaCha8Rng,
    topics: BTreeSet<String>,
    peers: BTreeMap<PeerId, BTreeSet<String>>,
    mesh: BTreeMap<String, BTreeSet<PeerId>>,
    seen: TimeCache,
    mcache_ids: TimeCache,
    mcache: HashMap<MessageId, GossipMessage>,
    buffer: Arc<ReceiveBuffer>,
    seq: u64,
    stats: EngineStats,
}

impl GossipEngine {
    pub fn new(local: PeerId, config: GossipConfig, seed: u64) -> Self {
        GossipEngine {
            local,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            topics: BTreeSet::new(),
            peers: BTreeMap::new(),
            mesh: BTreeMap::new(),
            seen: TimeCache::default(),
            mcache_ids: TimeCache::default(),
            mcache: HashMap::new(),
            buffer: Arc::new(ReceiveBuffer::default()),
            seq: 0,
            stats: EngineStats::default(),
        }
    }

    pub fn local(&self) -> PeerId {
        self.local
    }

    pub fn config(&self) -> &GossipConfig {
        &self.config
    }

    pub fn buffer(&self) -> Arc<ReceiveBuffer> {
        Arc::clone(&self.buffer)
    }

    pub fn drain(&self) -> Vec<GossipMessage> {
        self.buffer.drain()
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn is_subscribed(&self, topic: &str) -> bool {
        self.topics.contains(topic)
    }

    pub fn mesh(&self, topic: &str) -> BTreeSet<PeerId> {
        self.mesh.get(topic).cloned().unwrap_or_default()
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerId> {
        self.peers.keys()
    }

    /// Connected peers known to be subscribed to `topic`.
    pub fn topic_peers(&self, topic: &str) -> Vec<PeerId> {
        self.peers
            .iter()
            .filter(|(_, topics)| topics.contains(topic))
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn mcache_ids(&self, topic: &str) -> Vec<MessageId> {
        self.mcache_ids
            .order
            .iter()
            .filter(|(_, id)| self.mcache.get(id).is_some_and(|m| m.topic == topic))
            .map(|(_, id)| *id)
            .collect()
    }

    fn to_all<'a>(peers: impl IntoIterator<Item = &'a PeerId>, frame: &Frame) -> Vec<Outbound> {
        peers
            .into_iter()
            .map(|p| Outbound {
                to: *p,
                frame: frame.clone(),
            })
            .collect()
    }

    /// A new connection: tell the peer what we subscribe to.
    pub fn add_peer(&mut self, peer: PeerId) -> Vec<Outbound> {
        if peer == self.local {
            return Vec::new();
        }
        self.peers.entry(peer).or_default();
        self.topics
            .iter()
            .map(|t| Outbound {
                to: peer,
                frame: Frame::Subscribe { topic: t.clone() },
            })
            .collect()
    }

    pub fn remove_peer(&mut self, peer: &PeerId) {
        self.peers.remove(peer);
        for mesh in self.mesh.values_mut() {
            mesh.remove(peer);
        }
    }

    pub fn subscribe(&mut self, topic: &str) -> Vec<Outbound> {
        if !self.topics.insert(topic.to_string()) {
            return Vec::new();
        }
        self.mesh.entry(topic.to_string()).or_default();
        let mut out = Self::to_all(self.peers.keys(), &Frame::Subscribe { topic: topic.into() });
        out.extend(self.fill_mesh(topic));
        out
    }

    pub fn unsubscribe(&mut self, topic: &str) -> Vec<Outbound> {
        if !self.topics.remove(topic) {
            return Vec::new();
        }
        let mesh = self.mesh.remove(topic).unwrap_or_default();
        let mut out = Self::to_all(&mesh, &Frame::Control(ControlMessage::Prune { topic: topic.into() }));
        out.extend(Self::to_all(self.peers.keys(), &Frame::Unsubscribe { topic: topic.into() }));
        out
    }

    /// Graft random known subscribers until the mesh reaches `d`.
    fn fill_mesh(&mut self, topic: &str) -> Vec<Outbound> {
        let mesh = self.mesh.entry(topic.to_string()).or_default();
        if mesh.len() >= self.config.d {
            return Vec::new();
        }
        let mut candidates: Vec<PeerId> = self
            .peers
            .iter()
            .filter(|(p, topics)| topics.contains(topic) && !mesh.contains(p))
            .map(|(p, _)| *p)
            .collect();
        candidates.shuffle(&mut self.rng);
        let need = self.config.d - mesh.len();
        candidates.truncate(need);
        mesh.extend(candidates.iter().copied());
        Self::to_all(&candidates, &Frame::Control(ControlMessage::Graft { topic: topic.into() }))
    }

    fn remember(&mut self, m: &GossipMessage, now: Duration) {
        self.seen.insert(m.id, now);
        if self.mcache_ids.insert(m.id, now) {
            self.mcache.insert(m.id, m.clone());
        }
    }

    /// Publish to the topic mesh; with an empty mesh, to up to `d` known
    /// subscribers.
    pub fn publish(&mut self, topic: &str, payload: Vec<u8>, now: Duration) -> Result<(MessageId, Vec<Outbound>), GossipError> {
        if !self.topics.contains(topic) {
            return Err(GossipError::NotSubscribed(topic.to_string()));
        }
        if payload.len() > self.config.max_message_size {
            return Err(GossipError::TooLarge {
                size: payload.len(),
                max: self.config.max_message_size,
            });
        }
        self.seq += 1;
        let m = GossipMessage::new(self.local, self.seq, topic, payload);
        self.remember(&m, now);
        self.stats.published += 1;
        let mut targets: Vec<PeerId> = self.mesh(topic).into_iter().collect();
        if targets.is_empty() {
            targets = self.topic_peers(topic);
            targets.shuffle(&mut self.rng);
            targets.truncate(self.config.d);
        }
        let id = m.id;
        Ok((id, Self::to_all(&targets, &Frame::Message(m))))
    }

    pub fn handle(&mut self, from: PeerId, frame: Frame, now: Duration) -> Vec<Outbound> {
        if from == self.local {
            return Vec::new();
        }
        self.peers.entry(from).or_default();
        match frame {
            Frame::Hello { .. } => Vec::new(),
            Frame::Subscribe { topic } => {
                let fresh = self.peers.entry(from).or_default().insert(topic.clone());
                if !self.topics.contains(&topic) {
                    return Vec::new();
                }
                let mut out = self.fill_mesh(&topic);
                // A (re)joining peer may have missed recent traffic and can
                // end up only in meshes, which receive no IHAVE.
                let ids = self.mcache_ids(&topic);
                if fresh && !ids.is_empty() {
                    for chunk in ids.chunks(MAX_IDS_PER_FRAME) {
                        out.push(Outbound {
                            to: from,
                            frame: Frame::Control(ControlMessage::IHave {
                                topic: topic.clone(),
                                ids: chunk.to_vec(),
                            }),
                        });
                    }
                }
                out
            }
            Frame::Unsubscribe { topic } => {
                if let Some(topics) = self.peers.get_mut(&from) {
                    topics.remove(&topic);
                }
                if let Some(mesh) = self.mesh.get_mut(&topic) {
                    mesh.remove(&from);
                }
                Vec::new()
            }
            Frame::Message(m) => self.on_message(from, m, now),
            Frame::Control(c) => self.on_control(from, c),
        }
    }

    fn on_message(&mut self, from: PeerId, m: GossipMessage, now: Duration) -> Vec<Outbound> {
        if !self.topics.contains(&m.topic) || !m.id_is_valid() || m.sender == self.local {
            return Vec::new();
        }
        if self.seen.contains(&m.id) {
            self.stats.duplicates += 1;
            return Vec::new();
        }
        self.remember(&m, now);
        self.buffer.push(m.clone());
        self.stats.delivered += 1;
        let targets: Vec<PeerId> = self
            .mesh(&m.topic)
            .into_iter()
            .filter(|p| *p != from && *p != m.sender)
            .collect();
        self.stats.forwarded += targets.len() as u64;
        Self::to_all(&targets, &Frame::Message(m))
    }

    fn on_control(&mut self, from: PeerId, c: ControlMessage) -> Vec<Outbound> {
        match c {
            ControlMessage::IHave { topic, ids } => {
                if !self.topics.contains(&topic) {
                    return Vec::new();
                }
                let wanted: Vec<MessageId> = ids.into_iter().filter(|id| !self.seen.contains(id)).collect();
                if wanted.is_empty() {
                    return Vec::new();
                }
                self.stats.iwant_sent += wanted.len() as u64;
                vec![Outbound {
                    to: from,
                    frame: Frame::Control(ControlMessage::IWant { ids: wanted }),
                }]
            }
            ControlMessage::IWant { ids } => {
                let found: Vec<GossipMessage> = ids.iter().filter_map(|id| self.mcache.get(id).cloned()).collect();
                self.stats.iwant_served += found.len() as u64;
                found
                    .into_iter()
                    .map(|m| Outbound {
                        to: from,
                        frame: Frame::Message(m),
                    })
                    .collect()
            }
            ControlMessage::Graft { topic } => {
                if self.topics.contains(&topic) {
                    self.peers.entry(from).or_default().insert(topic.clone());
                    self.mesh.entry(topic).or_default().insert(from);
                    Vec::new()
                } else {
                    vec![Outbound {
                        to: from,
                        frame: Frame::Control(ControlMessage::Prune { topic }),
                    }]
                }
            }
            ControlMessage::Prune { topic } => {
                if let Some(mesh) = self.mesh.get_mut(&topic) {
                    mesh.remove(&from);
                }
                Vec::new()
            }
        }
    }

    /// Periodic maintenance: expire caches, graft or prune each topic mesh
    /// toward `d`, and send IHAVE digests to a few non-mesh subscribers.
    pub fn heartbeat(&mut self, now: Duration) -> Vec<Outbound> {
        for id in self.mcache_ids.expire(now, Duration::from_secs_f64(self.config.mcache_ttl_secs)) {
            self.mcache.remove(&id);
        }
        self.seen.expire(now, Duration::from_secs_f64(self.config.seen_ttl_secs));

        let mut out = Vec::new();
        let topics: Vec<String> = self.topics.iter().cloned().collect();
        for topic in topics {
            let subscribers: BTreeSet<PeerId> = self.topic_peers(&topic).into_iter().collect();
            let mesh = self.mesh.entry(topic.clone()).or_default();
            mesh.retain(|p| subscribers.contains(p));

            if mesh.len() < self.config.d {
                out.extend(self.fill_mesh(&topic));
            } else if mesh.len() > self.config.d_high {
                let mut members: Vec<PeerId> = mesh.iter().copied().collect();
                members.shuffle(&mut self.rng);
                let excess = members.len() - self.config.d;
                for p in &members[..excess] {
                    mesh.remove(p);
                }
                out.extend(Self::to_all(
                    &members[..excess],
                    &Frame::Control(ControlMessage::Prune { topic: topic.clone() }),
                ));
            }

            let ids = self.mcache_ids(&topic);
            if ids.is_empty() {
                continue;
            }
            let mesh = self.mesh(&topic);
            let mut others: Vec<PeerId> = subscribers.into_iter().filter(|p| !mesh.contains(p)).collect();
            others.shuffle(&mut self.rng);
            others.truncate(self.config.gossip_factor);
            for chunk in ids.chunks(MAX_IDS_PER_FRAME) {
                out.extend(Self::to_all(
                    &others,
                    &Frame::Control(ControlMessage::IHave {
                        topic: topic.clone(),
                        ids: chunk.to_vec(),
                    }),
                ));
            }
        }
        out
    }
}
