//! Byte-exact wire fixtures. Regenerate with `DEI_BLESS=1` only when the
//! format version changes.

use std::path::PathBuf;

use dei_gossip::wire::{read_frame, ControlMessage, Frame, WireError};
use dei_gossip::{GossipMessage, MessageId, PeerId};
use proptest::prelude::*;

fn peer(byte: u8) -> PeerId {
    format!("{:02x}", byte).repeat(32).parse().unwrap()
}

fn fixtures() -> Vec<(&'static str, Frame)> {
    let msg = GossipMessage::new(peer(0x11), 42, "dei/champions", br#"{"round":1}"#.to_vec());
    vec![
        ("hello", Frame::Hello { peer: peer(0xab) }),
        ("subscribe", Frame::Subscribe { topic: "dei/champions".into() }),
        ("unsubscribe", Frame::Unsubscribe { topic: "dei/champions".into() }),
        ("message", Frame::Message(msg.clone())),
        (
            "ihave",
            Frame::Control(ControlMessage::IHave {
                topic: "dei/champions".into(),
                ids: vec![msg.id, MessageId([0x22; 32])],
            }),
        ),
        ("iwant", Frame::Control(ControlMessage::IWant { ids: vec![msg.id] })),
        ("graft", Frame::Control(ControlMessage::Graft { topic: "t".into() })),
        ("prune", Frame::Control(ControlMessage::Prune { topic: "t".into() })),
    ]
}

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(format!("{name}.bin"))
}

#[test]
fn fixtures_match_encoding() {
    let bless = std::env::var_os("DEI_BLESS").is_some();
    for (name, frame) in fixtures() {
        let bytes = frame.encode();
        if bless {
            std::fs::write(path(name), &bytes).unwrap();
        }
        let pinned = std::fs::read(path(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(bytes, pinned, "{name} encoding drifted");
        assert_eq!(Frame::decode(&pinned).unwrap(), frame, "{name}");
    }
}

#[test]
fn message_fixture_layout() {
    let bytes = std::fs::read(path("message")).unwrap();
    let body_len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    assert_eq!(body_len + 4, bytes.len());
    assert_eq!(&bytes[4..6], &[1, 4], "version, kind");
    assert_eq!(&bytes[6..8], &13u16.to_be_bytes());
    assert_eq!(&bytes[8..21], b"dei/champions");
    let id = &bytes[21..53];
    assert_eq!(&bytes[53..85], &[0x11; 32]);
    assert_eq!(&bytes[85..93], &42u64.to_be_bytes());
    assert_eq!(&bytes[93..97], &11u32.to_be_bytes());
    assert_eq!(&bytes[97..], br#"{"round":1}"#);
    assert_eq!(id, MessageId::compute(&peer(0x11), 42, br#"{"round":1}"#).0);
}

#[test]
fn concatenated_fixtures_stream() {
    let mut stream = Vec::new();
    for (name, _) in fixtures() {
        stream.extend(std::fs::read(path(name)).unwrap());
    }
    let mut cursor = std::io::Cursor::new(stream);
    let mut frames = Vec::new();
    while let Some(f) = read_frame(&mut cursor).unwrap() {
        frames.push(f);
    }
    assert_eq!(frames, fixtures().into_iter().map(|(_, f)| f).collect::<Vec<_>>());
}

fn arb_topic() -> impl Strategy<Value = String> {
    "[a-z/é]{0,20}"
}

fn arb_frame() -> impl Strategy<Value = Frame> {
    let id = any::<[u8; 32]>().prop_map(MessageId);
    prop_oneof![
        any::<[u8; 32]>().prop_map(|b| Frame::Hello { peer: PeerId(b) }),
        arb_topic().prop_map(|topic| Frame::Subscribe { topic }),
        arb_topic().prop_map(|topic| Frame::Unsubscribe { topic }),
        (any::<[u8; 32]>(), any::<u64>(), arb_topic(), proptest::collection::vec(any::<u8>(), 0..300))
            .prop_map(|(s, seq, t, p)| Frame::Message(GossipMessage::new(PeerId(s), seq, &t, p))),
        (arb_topic(), proptest::collection::vec(id.clone(), 0..8))
            .prop_map(|(topic, ids)| Frame::Control(ControlMessage::IHave { topic, ids })),
        proptest::collection::vec(id, 0..8).prop_map(|ids| Frame::Control(ControlMessage::IWant { ids })),
        arb_topic().prop_map(|topic| Frame::Control(ControlMessage::Graft { topic })),
        arb_topic().prop_map(|topic| Frame::Control(ControlMessage::Prune { topic })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn any_frame_round_trips(f in arb_frame()) {
        prop_assert_eq!(Frame::decode(&f.encode()).unwrap(), f);
    }

    #[test]
    fn truncations_never_panic(f in arb_frame(), cut in any::<prop::sample::Index>()) {
        let bytes = f.encode();
        let n = cut.index(bytes.len());
        let r = Frame::decode(&bytes[..n]);
        prop_assert!(matches!(r, Err(WireError::Truncated)));
    }

    #[test]
    fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = Frame::decode(&bytes);
        let _ = Frame::decode_body(&bytes);
    }
}
