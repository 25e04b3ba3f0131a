//! Frame encoding. Every frame on a stream is a big-endian `u32` length
//! followed by that many bytes of body; the body starts with a version byte
//! and a kind byte. PROTOCOL.md gives the full layout.

use std::io::{self, Read, Write};

use crate::{GossipMessage, MessageId, PeerId};

pub const WIRE_VERSION: u8 = 1;
/// Upper bound on a frame body; comfortably above the largest message.
pub const MAX_FRAME_LEN: usize = 1 << 20;
/// Most message ids carried by one IHAVE or IWANT.
pub const MAX_IDS_PER_FRAME: usize = u16::MAX as usize;

const KIND_HELLO: u8 = 0x01;
const KIND_SUBSCRIBE: u8 = 0x02;
const KIND_UNSUBSCRIBE: u8 = 0x03;
const KIND_MESSAGE: u8 = 0x04;
const KIND_IHAVE: u8 = 0x05;
const KIND_IWANT: u8 = 0x06;
const KIND_GRAFT: u8 = 0x07;
const KIND_PRUNE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlMessage {
    IHave { topic: String, ids: Vec<MessageId> },
    IWant { ids: Vec<MessageId> },
    Graft { topic: String },
    Prune { topic: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// First frame on a stream: who is speaking.
    Hello { peer: PeerId },
    Subscribe { topic: String },
    Unsubscribe { topic: String },
    Message(GossipMessage),
    Control(ControlMessage),
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("unknown frame kind {0:#04x}")]
    Kind(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("topic is not UTF-8")]
    Utf8,
    #[error("message id does not match its contents")]
    BadMessageId,
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn str(&mut self, s: &str) {
        let bytes = s.as_bytes();
        let len = u16::try_from(bytes.len()).expect("topic longer than 65535 bytes");
        self.0.extend_from_slice(&len.to_be_bytes());
        self.0.extend_from_slice(bytes);
    }

    fn ids(&mut self, ids: &[MessageId]) {
        let n = u16::try_from(ids.len()).expect("too many ids for one frame");
        self.0.extend_from_slice(&n.to_be_bytes());
        for id in ids {
            self.0.extend_from_slice(&id.0);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array32(&mut self) -> Result<[u8; 32], WireError> {
        Ok(self.take(32)?.try_into().expect("32 bytes"))
    }

    fn str(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WireError::Utf8)
    }

    fn ids(&mut self) -> Result<Vec<MessageId>, WireError> {
        let n = self.u16()? as usize;
        (0..n).map(|_| self.array32().map(MessageId)).collect()
    }
}

impl Frame {
    /// Body bytes, without the length prefix.
    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer(vec![WIRE_VERSION]);
        match self {
            Frame::Hello { peer } => {
                w.0.push(KIND_HELLO);
                w.0.extend_from_slice(peer.as_bytes());
            }
            Frame::Subscribe { topic } => {
                w.0.push(KIND_SUBSCRIBE);
                w.str(topic);
            }
            Frame::Unsubscribe { topic } => {
                w.0.push(KIND_UNSUBSCRIBE);
                w.str(topic);
            }
            Frame::Message(m) => {
                w.0.push(KIND_MESSAGE);
                w.str(&m.topic);
                w.0.extend_from_slice(&m.id.0);
                w.0.extend_from_slice(m.sender.as_bytes());
                w.0.extend_from_slice(&m.seq.to_be_bytes());
                let len = u32::try_from(m.payload.len()).expect("payload fits u32");
                w.0.extend_from_slice(&len.to_be_bytes());
                w.0.extend_from_slice(&m.payload);
            }
            Frame::Control(ControlMessage::IHave { topic, ids }) => {
                w.0.push(KIND_IHAVE);
                w.str(topic);
                w.ids(ids);
            }
            Frame::Control(ControlMessage::IWant { ids }) => {
                w.0.push(KIND_IWANT);
                w.ids(ids);
            }
            Frame::Control(ControlMessage::Graft { topic }) => {
                w.0.push(KIND_GRAFT);
                w.str(topic);
            }
            Frame::Control(ControlMessage::Prune { topic }) => {
                w.0.push(KIND_PRUNE);
                w.str(topic);
            }
        }
        w.0
    }

    /// Length prefix plus body.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.encode_body();
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Frame, WireError> {
        let mut r = Reader { buf: body };
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(WireError::Version(version));
        }
        let frame = match r.u8()? {
            KIND_HELLO => Frame::Hello {
                peer: PeerId(r.array32()?),
            },
            KIND_SUBSCRIBE => Frame::Subscribe { topic: r.str()? },
            KIND_UNSUBSCRIBE => Frame::Unsubscribe { topic: r.str()? },
            KIND_MESSAGE => {
                let topic = r.str()?;
                let id = MessageId(r.array32()?);
                let sender = PeerId(r.array32()?);
                let seq = r.u64()?;
                let len = r.u32()? as usize;
                let payload = r.take(len)?.to_vec();
                let m = GossipMessage {
                    id,
                    topic,
                    sender,
                    seq,
                    payload,
                };
                if !m.id_is_valid() {
                    return Err(WireError::BadMessageId);
                }
                Frame::Message(m)
            }
            KIND_IHAVE => Frame::Control(ControlMessage::IHave {
                topic: r.str()?,
                ids: r.ids()?,
            }),
            KIND_IWANT => Frame::Control(ControlMessage::IWant { ids: r.ids()? }),
            KIND_GRAFT => Frame::Control(ControlMessage::Graft { topic: r.str()? }),
            KIND_PRUNE => Frame::Control(ControlMessage::Prune { topic: r.str()? }),
            kind => return Err(WireError::Kind(kind)),
        };
        if !r.buf.is_empty() {
            return Err(WireError::Trailing(r.buf.len()));
        }
        Ok(frame)
    }

    /// Decode one length-prefixed frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, WireError> {
        let mut r = Reader { buf: bytes };
        let len = r.u32()? as usize;
        if len > MAX_FRAME_LEN {
            return Err(WireError::TooLarge(len));
        }
        let body = r.take(len)?;
        if !r.buf.is_empty() {
            return Err(WireError::Trailing(r.buf.len()));
        }
        Frame::decode_body(body)
    }
}

pub fn write_frame<W: Write>(out: &mut W, frame: &Frame) -> Result<(), WireError> {
    out.write_all(&frame.encode())?;
    out.flush()?;
    Ok(())
}

/// Read one frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Frame>, WireError> {
    let mut len = [0u8; 4];
    match input.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    input.read_exact(&mut body)?;
    Frame::decode_body(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Frame> {
        let a = PeerId::from_label("a");
        let m = GossipMessage::new(a, 7, "dei/champions", b"{\"x\":1}".to_vec());
        vec![
            Frame::Hello { peer: a },
            Frame::Subscribe { topic: "t".into() },
            Frame::Unsubscribe { topic: "t".into() },
            Frame::Message(m.clone()),
            Frame::Control(ControlMessage::IHave {
                topic: "t".into(),
                ids: vec![m.id, MessageId([9; 32])],
            }),
            Frame::Control(ControlMessage::IWant { ids: vec![m.id] }),
            Frame::Control(ControlMessage::Graft { topic: "t".into() }),
            Frame::Control(ControlMessage::Prune { topic: "t".into() }),
        ]
    }

    #[test]
    fn frames_round_trip() {
        for f in samples() {
            assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
            let mut cursor = std::io::Cursor::new(f.encode());
            assert_eq!(read_frame(&mut cursor).unwrap(), Some(f));
            assert_eq!(read_frame(&mut cursor).unwrap(), None);
        }
    }

    #[test]
    fn hello_layout_is_pinned() {
        let f = Frame::Hello { peer: PeerId([0xab; 32]) };
        let bytes = f.encode();
        assert_eq!(&bytes[..6], &[0, 0, 0, 34, 1, 1]);
        assert_eq!(bytes.len(), 38);
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let mut bytes = samples()[3].encode();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(Frame::decode(&bytes), Err(WireError::BadMessageId)));
        assert!(matches!(Frame::decode(&[0, 0, 0, 2, 2, 1]), Err(WireError::Version(2))));
        assert!(matches!(Frame::decode(&[0, 0, 0, 2, 1, 0x7f]), Err(WireError::Kind(0x7f))));
        assert!(matches!(Frame::decode(&[0, 0, 0, 3, 1, 2, 0]), Err(WireError::Truncated)));
    }
}
