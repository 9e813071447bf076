//! Deterministic sample generators.
//!
//! Box samples are Halton points shifted by a seeded Cranley-Patterson rotation,
//! topped up with the box corners (when there are few enough) and the centre.
//! Everything is reproducible from a `u64` seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

/// Corners are included only up to this dimension.
const MAX_CORNER_DIM: usize = 10;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Radical inverse of `i` in base `b`.
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

/// Point `i` (starting at 1) of the `dim`-dimensional Halton sequence in `[0,1)^dim`.
pub fn halton(i: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "Halton sequence supports at most {} dimensions", PRIMES.len());
    PRIMES[..dim].iter().map(|&b| radical_inverse(i, b)).collect()
}

/// The box centre, its corners (for `n <= 10`) and `count` rotated Halton points.
pub fn box_samples(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = anchor_points(lower, upper);
    out.extend(halton_points(lower, upper, count, seed));
    out
}

/// Centre first, then corners when `n <= 10`.
pub fn anchor_points(lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let n = lower.len();
    let map = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| lower[i] + u[i] * (upper[i] - lower[i]))
            .collect()
    };
    let mut out = vec![map(&vec![0.5; n])];
    if n <= MAX_CORNER_DIM {
        for mask in 0..(1usize << n) {
            let u: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
            out.push(map(&u));
        }
    }
    out
}

/// `count` Halton points in the box, shifted by a seeded rotation.
pub fn halton_points(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = lower.len();
    let mut out = Vec::with_capacity(count);
    let map = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| lower[i] + u[i] * (upper[i] - lower[i]))
            .collect()
    };
    let mut r = rng(seed);
    let shift: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    let mut i = 1u64;
    while out.len() < count {
        let mut u = halton(i, n);
        for (ui, s) in u.iter_mut().zip(&shift) {
            *ui = (*ui + s).fract();
        }
        out.push(map(&u));
        i += 1;
    }
    out
}

/// Standard normal draw (Box-Muller).
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform direction on the unit sphere of `R^n`.
pub fn unit_vector<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
