//! Labelled, reproducible random streams.
//!
//! Every consumer of randomness (head motion, vision noise, trial seeding)
//! draws from its own ChaCha stream selected by a text label, so adding draws
//! in one subsystem never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

// FNV-1a; only needs to be stable across builds, not cryptographic.
fn label_id(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Independent stream for `(seed, label)`.
pub fn rng_stream(seed: u64, label: &str) -> SimRng {
    assert!(!label.is_empty(), "random stream label must be nonempty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_id(label));
    rng
}

/// Derives a child seed from a master seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use rand::RngCore;
    rng_stream(seed, label).next_u64()
}
