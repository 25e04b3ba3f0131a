//! GossipSub-style topic mesh for sharing champions between nodes.
//!
//! [`GossipEngine`] holds the protocol state and never touches I/O. It is
//! driven by one of three transports: a deterministic discrete-event
//! [`sim::SimNetwork`], plain TCP streams ([`tcp::TcpNode`]), or an HTTP
//! shim with the `/send`, `/recv`, `/topology` surface of an AXL node
//! ([`axl`]).

mod engine;
mod message;
mod peer;

pub mod axl;
pub mod scenarios;
pub mod sim;
pub mod tcp;
pub mod wire;

pub use engine::{EngineStats, GossipConfig, GossipEngine, GossipError, Outbound, ReceiveBuffer};
pub use message::{GossipMessage, MessageId};
pub use peer::{InvalidPeerId, PeerId};
pub use wire::{ControlMessage, Frame, WireError};
