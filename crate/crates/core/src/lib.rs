//! Buffer-based distributed LT codes for multi-source, multi-relay erasure
//! networks.
//!
//! Sources LT-encode their blocks with a class-partitioned schedule, relays
//! buffer and XOR-combine the incoming source symbols, and the destination
//! peels the resulting decoding graph. The [`analysis`] and [`optimizer`]
//! modules predict and design the relay-degree distribution; [`harness`]
//! runs Monte-Carlo experiments over whole networks.

pub mod analysis;
pub mod channel;
pub mod decoder;
pub mod dist;
pub mod harness;
pub mod optimizer;
pub mod relay;
pub mod seed;
pub mod source;

pub use dist::{DegreeDistribution, DistKind, Perspective};
