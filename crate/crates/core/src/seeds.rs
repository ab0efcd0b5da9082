//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha20Rng`. Child seeds are
//! derived from a parent seed and an index with the SplitMix64 finalizer so
//! that trials and bootstrap replicates can run in any order, on any number
//! of threads, and still draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `index` under `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_mul(GOLDEN).wrapping_add(1)))
}

/// Stream used by the data generators.
pub fn data_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Stream for bootstrap replicate `replicate` (redraw number `attempt`).
///
/// The replicate index selects the ChaCha stream; the attempt counter is
/// folded into the key. A domain constant separates these streams from the
/// data stream of the same seed.
pub fn replicate_rng(seed: u64, replicate: u64, attempt: u64) -> ChaCha20Rng {
    let key = derive_seed(seed ^ 0x5EED_B007_0000_0000, attempt);
    let mut rng = ChaCha20Rng::seed_from_u64(key);
    rng.set_stream(replicate);
    rng
}
