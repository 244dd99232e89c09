//! Splittable seeding: every random stream in a simulation is a ChaCha
//! stream keyed by the master seed and a stream id derived from its role.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index.wrapping_add(1)))
}

/// Stream ids for the roles inside one trial.
pub mod streams {
    const SOURCE: u64 = 1 << 56;
    const RELAY: u64 = 2 << 56;
    const SCHEDULER: u64 = 3 << 56;
    const PAYLOAD: u64 = 4 << 56;

    pub fn source(i: usize) -> u64 {
        SOURCE | i as u64
    }
    pub fn relay(j: usize) -> u64 {
        RELAY | j as u64
    }
    pub fn scheduler() -> u64 {
        SCHEDULER
    }
    pub fn payload(i: usize) -> u64 {
        PAYLOAD | i as u64
    }
}
