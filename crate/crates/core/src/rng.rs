//! Counter-based random streams.
//!
//! Every record gets its own ChaCha stream keyed by `(seed, domain)` and
//! selected by the record index, so draws do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domain for synthetic dataset generation.
pub const DOMAIN_GENERATE: u64 = 0x6765_6e65_7261_7465;
/// Stream domain for judgements simulated from a fitted model.
pub const DOMAIN_SIMULATE: u64 = 0x7369_6d75_6c61_7465;
/// Stream domain for MLP initialisation and shuffling.
pub const DOMAIN_MLP: u64 = 0x6d6c_705f_7472_6169;
/// Stream domain for train/test splitting.
pub const DOMAIN_SPLIT: u64 = 0x7370_6c69_745f_7474;

pub fn stream(domain: u64, seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Binomial draw as a sum of `m` Bernoulli trials. Exact for `p` in {0, 1}.
pub fn binomial<R: Rng + ?Sized>(rng: &mut R, m: u32, p: f64) -> u32 {
    (0..m).filter(|_| rng.random::<f64>() < p).count() as u32
}
