//! Seeded substreams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(seed, domain)` and selected by an index (replicate, permutation, ...).
//! A task's draws therefore depend only on its own index, never on how tasks
//! are scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Recorded in result metadata so outputs can be tied to the generator.
pub const GENERATOR: &str = "chacha8/rand_chacha-0.9;key=(seed,domain);stream=index";

/// Purpose tags keep unrelated consumers of one seed on disjoint keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Permutation = 1,
    Bootstrap = 2,
    DirichletMultinomial = 3,
    SpikeIn = 4,
    ReplicateSeed = 5,
    Test = 99,
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derive a child seed, e.g. the bootstrap seed for one simulation replicate.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    substream(seed, Domain::ReplicateSeed, index).next_u64()
}
