//! Counter-based seed derivation. Every random draw in the toy model and the
//! synthetic corpus is a pure function of a root seed plus the identifying
//! coordinates of the draw, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into one well-mixed 64-bit seed.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub(crate) fn hash_f32s(values: &[f32]) -> u64 {
    values
        .iter()
        .fold(0x1319_8A2E_0370_7344, |acc, v| splitmix64(acc ^ u64::from(v.to_bits())))
}

/// Uniform draw in [0, 1) from 53 high bits.
pub(crate) fn unit_f64(seed: u64) -> f64 {
    (splitmix64(seed) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
