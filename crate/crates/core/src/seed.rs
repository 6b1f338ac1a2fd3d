//! Sub-seed derivation.
//!
//! Every random stream in the crate is seeded from a root seed plus a
//! `(stream, index)` counter pair. Streams are fixed constants, so adding a
//! new run or a new stream never perturbs the values drawn by existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Per-sample corpus generation.
    Corpus = 1,
    /// Per-sample domain shift texture/noise.
    Shift = 2,
    /// Dataset split shuffling.
    Split = 3,
    /// Per-epoch batch ordering and augmentation draws.
    DataOrder = 4,
    /// Student and baseline initialization (shared on purpose).
    StudentInit = 5,
    TeacherInit = 6,
    /// Per-run root seeds of a repeat study.
    Repeat = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of `stream`/`index` from `root`.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream as u64) ^ index)
}

pub fn rng_for(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, index))
}
