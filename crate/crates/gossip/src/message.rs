use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PeerId;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageId(pub [u8; 32]);

impl MessageId {
    /// `SHA-256(sender ‖ seq as u64 BE ‖ SHA-256(payload))`: unique per
    /// (sender, sequence) and bound to the payload.
    pub fn compute(sender: &PeerId, seq: u64, payload: &[u8]) -> Self {
        let body = Sha256::digest(payload);
        let mut h = Sha256::new();
        h.update(sender.as_bytes());
        h.update(seq.to_be_bytes());
        h.update(body);
        MessageId(h.finalize().into())
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageId({})", hex::encode(&self.0[..4]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipMessage {
    pub id: MessageId,
    pub topic: String,
    pub sender: PeerId,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl GossipMessage {
    pub fn new(sender: PeerId, seq: u64, topic: impl Into<String>, payload: Vec<u8>) -> Self {
        GossipMessage {
            id: MessageId::compute(&sender, seq, &payload),
            topic: topic.into(),
            sender,
            seq,
            payload,
        }
    }

    pub fn id_is_valid(&self) -> bool {
        self.id == MessageId::compute(&self.sender, self.seq, &self.payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_payloads_get_distinct_ids_per_sequence() {
        let p = PeerId::from_label("a");
        let a = GossipMessage::new(p, 1, "t", b"x".to_vec());
        let b = GossipMessage::new(p, 2, "t", b"x".to_vec());
        assert_ne!(a.id, b.id);
        assert!(a.id_is_valid());
        let forged = GossipMessage { payload: b"y".to_vec(), ..a };
        assert!(!forged.id_is_valid());
    }
}
