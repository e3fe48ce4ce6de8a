//! Deterministic random streams.
//!
//! Every random draw is addressed by `(seed, role, index)` where `index` is a
//! global sample index, never a worker id. Results therefore do not depend on
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Roles separate the streams used by different parts of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    FieldSample = 1,
    OwnTypeSample = 2,
    ProbeType = 3,
    Trial = 4,
    Plurality = 5,
    LemmaProbe = 6,
    BeliefTrial = 7,
    Other = 99,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with extra words into a new 64-bit seed.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(mix64(seed), |acc, w| mix64(acc ^ mix64(*w)))
}

/// Stream for sample `index` of a given role.
pub fn stream(seed: u64, role: StreamRole, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[role as u64]));
    rng.set_stream(index);
    rng
}
