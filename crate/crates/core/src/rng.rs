//! Seeded randomness.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`. Floats and bounded integers are derived
//! from raw `next_u64` output with the fixed recipes below so results do not
//! depend on the `rand` distribution code of any particular release.

pub use rand_chacha::rand_core::{RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` under `seed`, for work that may run in parallel.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform in [0, 1) with 53 bits of precision.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in [lo, hi).
pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Unbiased uniform integer in [0, n) by rejection.
pub fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0, "below(0)");
    let threshold = n.wrapping_neg() % n;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % n;
        }
    }
}

/// In-place Fisher–Yates shuffle (Durstenfeld, descending index).
pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Sattolo's algorithm: a uniformly random single-cycle permutation, so no
/// element stays in place. Requires at least two elements to be meaningful.
pub fn sattolo<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64) as usize;
        items.swap(i, j);
    }
}
