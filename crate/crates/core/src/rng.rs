//! Counter-based random streams.
//!
//! Every replicate owns a ChaCha8 stream selected by its index, so results do
//! not depend on the order in which replicates are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child key from `parent` and a label; used to separate purposes
/// (main study, calibration run, nested resamples) under one master seed.
pub fn derive_key(parent: u64, label: u64) -> u64 {
    mix(parent ^ mix(label))
}

/// Stream `index` of the generator keyed by `key`.
pub fn stream(key: u64, index: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
