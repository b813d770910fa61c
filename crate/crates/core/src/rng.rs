//! Seed derivation and counter-based randomness.
//!
//! Sequential streams use ChaCha8 seeded from a `(seed, stream, lane)`
//! triple. Per-pulse quantities that must be reachable by index without
//! replaying a stream (basis, bit, emission offset, fading block factor)
//! come from a SplitMix64 hash of the index instead.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Each consumer of randomness owns one so that adding
/// draws in one component never shifts another component's sequence.
pub mod streams {
    pub const ENCODING: u64 = 0x01;
    pub const EMISSION_OFFSET: u64 = 0x02;
    pub const PHOTON_COUNT: u64 = 0x03;
    pub const CHANNEL: u64 = 0x10;
    pub const FADING: u64 = 0x11;
    pub const RECEIVER_SIGNAL: u64 = 0x20;
    pub const RECEIVER_BACKGROUND: u64 = 0x21;
    pub const CLICK_POLICY: u64 = 0x22;
    pub const SYNC_BEACON: u64 = 0x30;
    pub const QBER_SAMPLE: u64 = 0x40;
    pub const SCENARIO: u64 = 0x50;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a stream id and lane into a base seed.
#[inline]
pub fn derive_seed(seed: u64, stream: u64, lane: u64) -> u64 {
    splitmix64(splitmix64(seed ^ stream.wrapping_mul(GOLDEN)) ^ lane)
}

pub fn stream_rng(seed: u64, stream: u64, lane: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, lane))
}

/// Hash of `(seed, stream, index)`; cheap enough to call once per pulse.
#[inline]
pub fn index_hash(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ stream.wrapping_mul(GOLDEN)).wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Uniform in [0, 1) from the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal deviate addressed by index (Box-Muller on two hashed uniforms).
pub fn index_normal(seed: u64, stream: u64, index: u64) -> f64 {
    let h1 = index_hash(seed, stream, index);
    let h2 = splitmix64(h1);
    let u1 = 1.0 - unit_f64(h1); // (0, 1]
    let u2 = unit_f64(h2);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
