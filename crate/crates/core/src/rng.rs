//! Deterministic random streams.
//!
//! Every random quantity in the toolkit is drawn from a ChaCha8 stream keyed
//! by `(seed, domain)` and selected by a per-item stream index, so a result
//! depends only on the seed and the item, never on thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream families. Distinct domains never share keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Dose = 1,
    Acquisition = 2,
    Truth = 3,
    Trials = 4,
    Table = 5,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
