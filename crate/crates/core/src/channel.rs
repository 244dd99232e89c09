//! Memoryless erasure links.

use rand::Rng;
use thiserror::Error;

use crate::seed::{mix, stream_rng, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("erasure probability {0} outside [0, 1]")]
pub struct InvalidErasure(pub f64);

/// Endpoint of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeId {
    Source(usize),
    Relay(usize),
    Destination,
}

impl NodeId {
    fn code(self) -> u64 {
        match self {
            NodeId::Source(i) => (1 << 28) | i as u64,
            NodeId::Relay(j) => (2 << 28) | j as u64,
            NodeId::Destination => 3 << 28,
        }
    }
}

/// A binary/packet erasure channel with its own random stream.
#[derive(Debug, Clone)]
pub struct ErasureLink {
    from: NodeId,
    to: NodeId,
    delta: f64,
    rng: SimRng,
}

impl ErasureLink {
    /// The stream is derived from `(seed, from, to)` only, so the erasure
    /// pattern does not depend on the order in which links are exercised.
    pub fn new(from: NodeId, to: NodeId, delta: f64, seed: u64) -> Result<Self, InvalidErasure> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(InvalidErasure(delta));
        }
        let stream = mix(from.code() << 32 | to.code());
        Ok(Self {
            from,
            to,
            delta,
            rng: stream_rng(seed, stream),
        })
    }

    pub fn from(&self) -> NodeId {
        self.from
    }

    pub fn to(&self) -> NodeId {
        self.to
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Delivers `symbol` with probability `1 - δ`. Consumes exactly one
    /// uniform variate per call.
    pub fn transmit<T>(&mut self, symbol: T) -> Option<T> {
        let u: f64 = self.rng.gen();
        if u < self.delta {
            None
        } else {
            Some(symbol)
        }
    }
}
