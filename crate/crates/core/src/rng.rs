//! Deterministic, platform-independent random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a master
//! seed plus a purpose label, so adding a draw in one place never shifts the
//! values seen by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG from a master seed and a purpose label.
pub fn seed_stream(master: u64, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
