//! Sign-variation counts of real vectors and membership in the cones `P^k_-` / `P^k_+`.
//!
//! `s_minus` deletes zero entries before counting adjacent sign changes, `s_plus`
//! replaces every zero by whichever of `±1` maximises the count. Both treat an
//! entry as zero when `|x_i| <= tau`; the plain functions use `tau = 0`.
//!
//! ```
//! use coop2::signvar::{s_minus, s_plus};
//!
//! let x = [-3.0, 0.0, 0.0, 3.0, 4.0];
//! assert_eq!(s_minus(&x), 1);
//! assert_eq!(s_plus(&x), 3);
//! ```

use serde::Serialize;
use thiserror::Error;

/// Largest number of zero entries `s_plus_exhaustive` will enumerate.
pub const MAX_ENUMERATED_ZEROS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignVarError {
    #[error("entry {index} is zero; sigma is only defined for vectors without zero entries")]
    ZeroEntry { index: usize },
    #[error("k = {k} is outside [1, {n}]")]
    BadK { k: usize, n: usize },
    #[error("{zeros} zero entries exceed the enumeration cap of {MAX_ENUMERATED_ZEROS}")]
    TooManyZeros { zeros: usize },
}

/// Weak and strong sign-variation counts of one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignVarResult {
    pub weak: usize,
    pub strong: usize,
    pub n: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sign {
    Neg,
    Zero,
    Pos,
}

fn sign_of(v: f64, tau: f64) -> Sign {
    if v.abs() <= tau {
        Sign::Zero
    } else if v > 0.0 {
        Sign::Pos
    } else {
        Sign::Neg
    }
}

/// Number of sign changes in a vector with no zero entries.
pub fn sigma(x: &[f64]) -> Result<usize, SignVarError> {
    if let Some(index) = x.iter().position(|&v| v == 0.0) {
        return Err(SignVarError::ZeroEntry { index });
    }
    Ok(x.windows(2).filter(|w| w[0] * w[1] < 0.0).count())
}

/// Weak sign variation with exact zero detection.
pub fn s_minus(x: &[f64]) -> usize {
    s_minus_tol(x, 0.0)
}

/// Weak sign variation: zeros (entries with `|x_i| <= tau`) are deleted first.
pub fn s_minus_tol(x: &[f64], tau: f64) -> usize {
    let mut count = 0;
    let mut last = Sign::Zero;
    for &v in x {
        let s = sign_of(v, tau);
        if s == Sign::Zero {
            continue;
        }
        if last != Sign::Zero && s != last {
            count += 1;
        }
        last = s;
    }
    count
}

/// Strong sign variation with exact zero detection.
pub fn s_plus(x: &[f64]) -> usize {
    s_plus_tol(x, 0.0)
}

/// Strong sign variation, computed by a greedy left-to-right completion.
///
/// Each zero takes the sign opposite to its left neighbour. A run of zeros
/// followed by a nonzero entry can then lose exactly one variation at its right
/// end when the parity is wrong, which is the best any completion can do.
pub fn s_plus_tol(x: &[f64], tau: f64) -> usize {
    let n = x.len();
    if n == 0 {
        return 0;
    }
    let signs: Vec<Sign> = x.iter().map(|&v| sign_of(v, tau)).collect();
    let first = match signs.iter().position(|&s| s != Sign::Zero) {
        Some(i) => i,
        None => return n - 1,
    };
    // Leading zeros can always be chosen to alternate into the first nonzero entry.
    let mut count = first;
    let mut prev = signs[first];
    for &s in &signs[first + 1..] {
        let chosen = match s {
            Sign::Zero => flip(prev),
            other => other,
        };
        if chosen != prev {
            count += 1;
        }
        prev = chosen;
    }
    count
}

fn flip(s: Sign) -> Sign {
    match s {
        Sign::Pos => Sign::Neg,
        Sign::Neg => Sign::Pos,
        Sign::Zero => Sign::Zero,
    }
}

/// Strong sign variation by enumerating all `±1` completions of the zeros.
///
/// Exponential in the number of zeros; used to cross-check [`s_plus`].
pub fn s_plus_exhaustive(x: &[f64], tau: f64) -> Result<usize, SignVarError> {
    let n = x.len();
    if n == 0 {
        return Ok(0);
    }
    let zeros: Vec<usize> = (0..n).filter(|&i| x[i].abs() <= tau).collect();
    if zeros.len() == n {
        return Ok(n - 1);
    }
    if zeros.len() > MAX_ENUMERATED_ZEROS {
        return Err(SignVarError::TooManyZeros { zeros: zeros.len() });
    }
    let mut z: Vec<f64> = x.to_vec();
    let mut best = 0;
    for mask in 0u32..(1u32 << zeros.len()) {
        for (bit, &i) in zeros.iter().enumerate() {
            z[i] = if mask & (1 << bit) != 0 { 1.0 } else { -1.0 };
        }
        let count = z.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
        best = best.max(count);
    }
    Ok(best)
}

/// Both counts at once.
pub fn sign_variations(x: &[f64], tau: f64) -> SignVarResult {
    SignVarResult {
        weak: s_minus_tol(x, tau),
        strong: s_plus_tol(x, tau),
        n: x.len(),
    }
}

fn check_k(k: usize, n: usize) -> Result<(), SignVarError> {
    if k == 0 || k > n {
        Err(SignVarError::BadK { k, n })
    } else {
        Ok(())
    }
}

/// `x ∈ P^k_-`, i.e. at most `k - 1` weak sign variations.
pub fn in_pk_minus(x: &[f64], k: usize) -> Result<bool, SignVarError> {
    check_k(k, x.len())?;
    Ok(s_minus(x) < k)
}

/// `x ∈ P^k_+`, i.e. at most `k - 1` strong sign variations.
pub fn in_pk_plus(x: &[f64], k: usize) -> Result<bool, SignVarError> {
    check_k(k, x.len())?;
    Ok(s_plus(x) < k)
}

/// Zero threshold used when annotating trajectory samples: `1e-10 * |x|_inf`.
pub fn trajectory_tau(x: &[f64]) -> f64 {
    1e-10 * x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
