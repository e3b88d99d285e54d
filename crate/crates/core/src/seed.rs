//! Seed derivation. Every stochastic component draws from its own ChaCha
//! stream keyed by a master seed and a purpose tag, so adding a consumer in
//! one place never shifts the random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a stream tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// Derives a child seed from a parent seed and a textual purpose.
pub fn derive_str(seed: u64, purpose: &str) -> u64 {
    let tag = purpose
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    derive(seed, tag)
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, purpose: &str) -> Rng {
    rng(derive_str(seed, purpose))
}
