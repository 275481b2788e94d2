//! Deterministic random streams.
//!
//! Every agent in every Monte-Carlo run draws from its own ChaCha stream
//! derived from `(master seed, run, purpose, agent)`. Nothing reads the
//! wall clock, so identical seeds give identical trajectories regardless of
//! how runs are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// What a stream is used for; keeps data, initialization and link-failure
/// draws independent of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Init = 2,
    Links = 3,
    Problem = 4,
    Estimation = 5,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes the identifying tuple into a single 64-bit seed.
pub fn derive_seed(master: u64, run: u64, purpose: Purpose, index: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ run.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix64(h ^ (purpose as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix64(h ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB))
}

pub fn stream(master: u64, run: u64, purpose: Purpose, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, run, purpose, index))
}

/// One data stream per agent for a given run.
pub fn agent_streams(master: u64, run: u64, agents: usize) -> Vec<Stream> {
    (0..agents as u64)
        .map(|k| stream(master, run, Purpose::Data, k))
        .collect()
}
