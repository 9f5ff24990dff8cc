//! Seed plumbing. Every randomized routine takes an explicit seed; derived
//! streams are mixed with splitmix64 so they do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `stream` into `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named sub-streams used by the pipeline stages.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const BASELINE_SPLIT: u64 = 2;
    pub const BASELINE_TUNING: u64 = 3;
    pub const SURROGATE_SPLIT: u64 = 4;
    pub const FIT: u64 = 5;
    pub const BENCHMARK: u64 = 6;
}

/// Log-uniform draw on `[lo, hi]`.
pub fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    use rand::Rng as _;
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}
