// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded randomness.
//!
//! Everything random in the pipeline (initialization, shuffles, window
//! sampling, reservoir subsampling) draws from xoshiro256++ whose 256-bit
//! state is expanded from a `u64` seed with SplitMix64. Both algorithms are
//! fully specified, so a seed reproduces the same stream on every platform.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as SeededRng;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (block index, worker, ...).
pub fn derive(seed: u64, stream: u64) -> SeededRng {
    // SplitMix64 finalizer over the pair keeps nearby streams decorrelated.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seeded(z ^ (z >> 31))
}
