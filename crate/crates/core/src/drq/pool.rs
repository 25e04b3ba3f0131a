use std::collections::{HashSet, VecDeque};

use crate::redcode::Warrior;

#[derive(Debug, Clone)]
struct Entry {
    hash: String,
    warrior: Warrior,
}

impl Entry {
    fn new(warrior: Warrior) -> Self {
        Entry {
            hash: warrior.content_hash(),
            warrior,
        }
    }
}

/// Opponents a node evaluates against: seeds, a window of its own recent
/// champions, and every champion received from peers.
#[derive(Debug, Clone)]
pub struct OpponentPool {
    seeds: Vec<Entry>,
    own: VecDeque<Entry>,
    peers: Vec<Entry>,
    window: Option<usize>,
}

impl OpponentPool {
    /// `window` is the number of own champions retained; `None` keeps all.
    pub fn new(seeds: Vec<Warrior>, window: Option<usize>) -> Self {
        assert!(!seeds.is_empty(), "opponent pool needs at least one seed");
        OpponentPool {
            seeds: seeds.into_iter().map(Entry::new).collect(),
            own: VecDeque::new(),
            peers: Vec::new(),
            window,
        }
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.entries().any(|e| e.hash == hash)
    }

    fn entries(&self) -> impl Iterator<Item = &Entry> {
        self.seeds.iter().chain(self.own.iter()).chain(self.peers.iter())
    }

    /// Record this node's round champion. A champion already in the pool
    /// only refreshes its place in the window, so the pool never shrinks.
    pub fn add_own(&mut self, champion: Warrior) {
        let entry = Entry::new(champion);
        if let Some(pos) = self.own.iter().position(|e| e.hash == entry.hash) {
            let existing = self.own.remove(pos).expect("position is in range");
            self.own.push_back(existing);
            return;
        }
        if self.contains(&entry.hash) || self.window == Some(0) {
            return;
        }
        self.own.push_back(entry);
        if let Some(k) = self.window {
            while self.own.len() > k {
                self.own.pop_front();
            }
        }
    }

    /// Append a peer champion; returns false for one already present.
    pub fn add_peer(&mut self, warrior: Warrior) -> bool {
        let entry = Entry::new(warrior);
        if self.contains(&entry.hash) {
            return false;
        }
        self.peers.push(entry);
        true
    }

    /// De-duplicated union in order seeds, own champions, peers, paired
    /// with content hashes.
    pub fn members(&self) -> Vec<(String, Warrior)> {
        let mut seen = HashSet::new();
        self.entries()
            .filter(|e| seen.insert(e.hash.as_str()))
            .map(|e| (e.hash.clone(), e.warrior.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.members().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn own_len(&self) -> usize {
        self.own.len()
    }

    pub fn peer_len(&self) -> usize {
        self.peers.len()
    }
}
