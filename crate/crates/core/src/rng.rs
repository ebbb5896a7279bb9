//! Seed derivation for reproducible, thread-count independent random streams.
//!
//! Every random quantity is drawn from a generator keyed by `(master seed,
//! label, index)`. Labels separate the independent sources (cell values,
//! missingness flags, row lengths, Monte Carlo draws, trials) and the index
//! separates replicates, so work can be split across threads in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const VALUES: u64 = 0x5641_4c55_4553;
pub const FLAGS: u64 = 0x0046_4c41_4753;
pub const LENGTHS: u64 = 0x4c45_4e47_5448;
pub const PLATE: u64 = 0x0050_4c41_5445;
pub const MC_DRAW: u64 = 0x4d43_4452_4157;
pub const TRIAL: u64 = 0x0054_5249_414c;
pub const GROUP: u64 = 0x0047_524f_5550;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(label, index)` under `seed`.
pub fn derive(seed: u64, label: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(label)).wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03)))
}

pub fn stream(seed: u64, label: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive(seed, label, index))
}
