//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit stream. Independent sub-streams
//! are derived from one master seed with [`substream`]: the ChaCha8 key is the
//! master seed and the 64-bit stream id packs a domain tag in the high 16 bits
//! and an index in the low 48 bits. Replicate `r` of a simulation therefore
//! always sees the same numbers, whichever worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags used by the crate. Distinct tags never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Domain {
    Simulation = 1,
    Chain = 2,
    Predictive = 3,
    Bootstrap = 4,
    Latent = 5,
}

pub fn master(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    debug_assert!(index < (1 << 48));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | index);
    rng
}

/// Derives a fresh 64-bit seed, used when a whole sub-computation (a chain,
/// a posterior draw) needs its own family of substreams.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, domain, index).next_u64()
}
