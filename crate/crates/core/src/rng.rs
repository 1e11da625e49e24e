//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`ChaCha20Rng`] (the ChaCha
//! stream cipher with 20 rounds, as implemented by `rand_chacha`), keyed by a
//! 64-bit seed through `SeedableRng::seed_from_u64`. Independent streams for
//! the same seed are obtained with [`stream`], which selects a ChaCha stream id.
//! Uniform variates use the top 53 bits of `next_u64`, so the mapping from seed
//! to values is fully specified and reproducible in any language with a
//! ChaCha20 implementation.

pub use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math;

pub type Rng = ChaCha20Rng;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for stream `stream` of `seed`; streams never overlap.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on `[0, 1)`.
#[inline]
pub fn uniform(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_M53
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn uniform_open(rng: &mut Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
}

/// Uniform on `[lo, hi)`.
#[inline]
pub fn uniform_range(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Integer in `0..n` by Lemire's multiply-shift (bias below 2^-64 · n).
#[inline]
pub fn below(rng: &mut Rng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Standard normal via Box-Muller (one variate per call).
pub fn normal(rng: &mut Rng) -> f64 {
    let u1 = uniform_open(rng);
    let u2 = uniform(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * core::f64::consts::PI * u2)
}

/// Exponential with unit rate.
pub fn exponential(rng: &mut Rng) -> f64 {
    -math::ln(uniform_open(rng))
}

/// Fisher-Yates shuffle, walking from the last position down and swapping
/// position `i` with `below(rng, i + 1)`.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}
