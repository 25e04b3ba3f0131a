//! Distributed quality-diversity co-evolution of Core War warriors.
//!
//! Each node runs a MAP-Elites archive under Red Queen pressure from an
//! opponent pool, mutating warriors with a pluggable operator, and shares
//! its round champions with peers over a gossip mesh.

pub mod redcode;
pub mod mars;
pub mod seed;
pub mod corpus;
pub mod archive;
pub mod mutation;
pub mod drq;
pub mod experiment;
