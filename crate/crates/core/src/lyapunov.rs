//! Sampled Lyapunov certificate near an unstable equilibrium.
//!
//! In the scaled coordinates `q = S_δ (x - e)` the first two components follow the
//! dominant pair. With `V(q) = (q1² + q2²)/2` the quadratic growth `α` of the
//! scaled block beats the Taylor remainder on small level sets of `Ω̃_{≤1}`, so
//! those level sets are left outward. Every constant below comes from finite
//! samples; the certificate is evidence, not a proof.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{from_rows, sym2_min_eig, to_rows, vec_norm2, Mat};
use crate::models::{BoxDomain, ModelError, Model};
use crate::ode::{integrate, s_minus_of_difference, OdeError, OdeOptions};
use crate::sampling::{box_samples, rng};
use crate::signvar::s_minus;
use crate::spectral::{scaled_block, BlockCase, SpectralError, SpectralSplit};

pub const LABEL: &str = "sampled, not proved";
/// Candidate separation constants are `2^-1, ..., 2^-EPS_GRID`.
pub const EPS_GRID: i32 = 20;

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("p_ratio of the zero vector")]
    ZeroVector,
    #[error("no ε in the grid separates the scaled cone (largest p = {max_p})")]
    SeparationFailure { max_p: f64 },
    #[error("symmetric part of the scaled block is not positive-definite (α = {alpha})")]
    NotPositiveDefinite { alpha: f64 },
    #[error("the spectral split carries no δ; the dominant pair is not unstable")]
    NotUnstable,
    #[error("dimension {0} is below 3")]
    DimensionTooSmall(usize),
    #[error("scaled transform is singular")]
    Singular,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// `|(ξ3, ..., ξn)| / |ξ|`.
pub fn p_ratio(xi: &[f64]) -> Result<f64, LyapunovError> {
    let total = vec_norm2(xi);
    if total == 0.0 {
        return Err(LyapunovError::ZeroVector);
    }
    let tail = vec_norm2(xi.get(2..).unwrap_or(&[]));
    Ok((tail / total).min(1.0))
}

/// `θ̃ = 1 / (1 - (1 - ε̃)²)`.
pub fn theta_from_eps(eps: f64) -> f64 {
    1.0 / (1.0 - (1.0 - eps) * (1.0 - eps))
}

/// `V(q) = (q1² + q2²) / 2`.
pub fn level(q: &[f64]) -> f64 {
    0.5 * (q[0] * q[0] + q[1] * q[1])
}

/// Sample sizes and seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSampling {
    pub cone_samples: usize,
    pub remainder_samples: usize,
    pub level_samples: usize,
    pub trajectories: usize,
    pub trajectory_horizon: f64,
    pub seed: u64,
    /// Where trajectory starts are drawn; the model box when absent.
    pub start_region: Option<BoxDomain>,
}

impl Default for LyapunovSampling {
    fn default() -> Self {
        LyapunovSampling {
            cone_samples: 100_000,
            remainder_samples: 100_000,
            level_samples: 10_000,
            trajectories: 20,
            trajectory_horizon: 100.0,
            seed: 0,
            start_region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelCheck {
    pub eta: f64,
    pub tested: usize,
    /// Draws that fell outside the box and were replaced.
    pub rejected: usize,
    pub min_vdot: f64,
    /// `min V̇ / V` over the tested points.
    pub min_vdot_over_v: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceCheck {
    pub trajectories: usize,
    pub horizon: f64,
    /// Lower bound that `V` must respect along every trajectory.
    pub floor: f64,
    /// Smallest `V` seen, over all trajectories and steps.
    pub min_level: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCertificate {
    pub model: String,
    pub label: &'static str,
    pub seed: u64,
    pub equilibrium: Vec<f64>,
    pub delta: f64,
    pub block_case: BlockCase,
    pub scaled_block: [[f64; 2]; 2],
    /// Rows of `S_δ = diag(1, δ, I) S`.
    pub s_delta: Vec<Vec<f64>>,
    pub eps_tilde: f64,
    /// Largest `p(ξ)` seen on the scaled cone.
    pub max_p_ratio: f64,
    pub cone_samples: usize,
    pub theta_tilde: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub remainder_samples: usize,
    pub alpha: f64,
    /// `(α / (2^{3/2} M θ̃))²`; absent when `M = 0`.
    pub eta0: Option<f64>,
    pub eta0_unbounded: bool,
    /// The level actually halved and quartered: `η₀` capped so the level sets fit in the box.
    pub eta_ref: f64,
    pub levels: Vec<LevelCheck>,
    pub invariance: Option<InvarianceCheck>,
    pub passed: bool,
}

/// Random `z` with `s⁻(z) <= 1`: one sign change at most, some exact zeros.
pub fn sample_two_cone<R: Rng>(r: &mut R, n: usize) -> Vec<f64> {
    loop {
        let cut = r.random_range(0..=n);
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        let z: Vec<f64> = (0..n)
            .map(|i| {
                if r.random::<f64>() < 0.1 {
                    return 0.0;
                }
                let mag = r.random::<f64>();
                if i < cut {
                    sign * mag
                } else {
                    -sign * mag
                }
            })
            .collect();
        if z.iter().any(|&v| v != 0.0) {
            debug_assert!(s_minus(&z) <= 1);
            return z;
        }
    }
}

fn mat_vec(m: &Mat, x: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
        .collect()
}

/// Builds the certificate for `model` at the equilibrium `e` with split `split` of `J(e)`.
pub fn build_certificate(
    model: &Model,
    e: &[f64],
    split: &SpectralSplit,
    sampling: &LyapunovSampling,
) -> Result<LyapunovCertificate, LyapunovError> {
    let n = e.len();
    if n < 3 {
        return Err(LyapunovError::DimensionTooSmall(n));
    }
    let delta = split.delta.ok_or(LyapunovError::NotUnstable)?;
    let mut s_delta = from_rows(&split.transform);
    for j in 0..n {
        s_delta[(1, j)] *= delta;
    }
    let s_inv = s_delta.clone().try_inverse().ok_or(LyapunovError::Singular)?;
    let a = model.jacobian(e)?;

    // Separation: p(S_δ z) over the cone s⁻(z) <= 1.
    let seed = sampling.seed;
    let max_p = (0..sampling.cone_samples)
        .into_par_iter()
        .chunks(1024)
        .map(|chunk| {
            let mut r = rng(seed ^ 0xC0_4E00 ^ (chunk[0] as u64));
            chunk
                .iter()
                .map(|_| {
                    let z = sample_two_cone(&mut r, n);
                    p_ratio(&mat_vec(&s_delta, &z)).unwrap_or(0.0)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let eps_tilde = (1..=EPS_GRID)
        .map(|k| 2f64.powi(-k))
        .find(|eps| max_p <= 1.0 - eps)
        .ok_or(LyapunovError::SeparationFailure { max_p })?;
    let theta_tilde = theta_from_eps(eps_tilde);

    // Taylor remainder h = S_δ (f(x) - A (x - e)), relative to |q|².
    let a_tilde_norm = (&s_delta * &a * &s_inv).norm();
    let points = remainder_points(&model.bounds, e, sampling.remainder_samples, seed ^ 0x7A_710E);
    let ratios: Vec<f64> = points
        .par_iter()
        .map(|x| remainder_ratio(model, e, &a, &s_delta, a_tilde_norm, x))
        .collect::<Result<_, _>>()?;
    let m = ratios.into_iter().fold(0.0, f64::max);

    let block = scaled_block(split.dominant_block, delta);
    let alpha = sym2_min_eig(block);
    if !(alpha > 0.0) {
        return Err(LyapunovError::NotPositiveDefinite { alpha });
    }
    let eta0 = (m > 0.0).then(|| (alpha / (2f64.powf(1.5) * m * theta_tilde)).powi(2));

    // Level sets of Ω̃_{≤1} with V <= eta_box lie inside the box.
    let r_box = (0..n)
        .map(|i| (e[i] - model.bounds.lower[i]).min(model.bounds.upper[i] - e[i]))
        .fold(f64::INFINITY, f64::min);
    let s_inv_norm = s_inv.norm();
    let eta_box = (r_box / s_inv_norm).powi(2) / (2.0 * theta_tilde);
    let eta_ref = eta0.map_or(eta_box, |v| v.min(eta_box));

    let levels: Vec<LevelCheck> = [0.5, 0.25]
        .iter()
        .enumerate()
        .map(|(k, &frac)| {
            level_check(
                model,
                e,
                &s_delta,
                frac * eta_ref,
                sampling.level_samples,
                seed ^ (0x1E7E_0000 + k as u64),
            )
        })
        .collect::<Result<_, _>>()?;

    let invariance = if sampling.trajectories > 0 {
        Some(invariance_check(model, e, &s_delta, eta_ref, sampling)?)
    } else {
        None
    };
    let passed = levels.iter().all(|l| l.passed) && invariance.as_ref().is_none_or(|c| c.passed);

    Ok(LyapunovCertificate {
        model: model.name.clone(),
        label: LABEL,
        seed,
        equilibrium: e.to_vec(),
        delta,
        block_case: split.block_case,
        scaled_block: block,
        s_delta: to_rows(&s_delta),
        eps_tilde,
        max_p_ratio: max_p,
        cone_samples: sampling.cone_samples,
        theta_tilde,
        m,
        remainder_samples: points.len(),
        alpha,
        eta0,
        eta0_unbounded: eta0.is_none(),
        eta_ref,
        levels,
        invariance,
        passed,
    })
}

/// Half low-discrepancy box points, half local points `e + ρ u ∘ w` with `ρ`
/// log-uniform in `[1e-3, 1]`, `u` uniform in `[-1, 1]^n` and `w` the box widths.
///
/// The ratio `|h| / |q|²` peaks at moderate distance from `e`, a region that
/// uniform box samples hit rarely when the box is wide.
pub fn remainder_points(bounds: &BoxDomain, e: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let global = count / 2;
    let mut points = box_samples(&bounds.lower, &bounds.upper, global, seed);
    let w = bounds.widths();
    let mut r = rng(seed ^ 0x10CA1);
    for _ in 0..count - global {
        let rho = 10f64.powf(-3.0 * r.random::<f64>());
        let x: Vec<f64> = (0..e.len())
            .map(|i| (e[i] + rho * w[i] * r.random_range(-1.0..=1.0)).clamp(bounds.lower[i], bounds.upper[i]))
            .collect();
        points.push(x);
    }
    points
}

/// `max_i |h_i(q)| / |q|²` at `x`, with roundoff in `h` discounted.
fn remainder_ratio(
    model: &Model,
    e: &[f64],
    a: &Mat,
    s_delta: &Mat,
    a_tilde_norm: f64,
    x: &[f64],
) -> Result<f64, LyapunovError> {
    let z: Vec<f64> = x.iter().zip(e).map(|(p, q)| p - q).collect();
    let q = mat_vec(s_delta, &z);
    let qn = vec_norm2(&q);
    if qn == 0.0 {
        return Ok(0.0);
    }
    let f = model.field(x)?;
    let lin = mat_vec(a, &z);
    let diff: Vec<f64> = f.iter().zip(&lin).map(|(u, v)| u - v).collect();
    let h = mat_vec(s_delta, &diff);
    let g = vec_norm2(&mat_vec(s_delta, &f));
    let floor = 64.0 * f64::EPSILON * (a_tilde_norm * qn + g);
    let worst = h.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok((worst - floor).max(0.0) / (qn * qn))
}

/// Fresh uniform resample of the remainder bound: `(violations, largest relative excess)`.
pub fn remainder_resample(
    model: &Model,
    cert: &LyapunovCertificate,
    samples: usize,
    seed: u64,
) -> Result<(usize, f64), LyapunovError> {
    let e = &cert.equilibrium;
    let s_delta = from_rows(&cert.s_delta);
    let s_inv = s_delta.clone().try_inverse().ok_or(LyapunovError::Singular)?;
    let a = model.jacobian(e)?;
    let a_tilde_norm = (&s_delta * &a * &s_inv).norm();
    let points = remainder_points(&model.bounds, e, samples, seed);
    let ratios: Vec<f64> = points
        .par_iter()
        .map(|x| remainder_ratio(model, e, &a, &s_delta, a_tilde_norm, x))
        .collect::<Result<_, _>>()?;
    let mut violations = 0;
    let mut excess = 0.0_f64;
    for v in ratios {
        if v > cert.m {
            violations += 1;
            excess = excess.max(if cert.m > 0.0 { v / cert.m - 1.0 } else { f64::INFINITY });
        }
    }
    Ok((violations, excess))
}

/// Points `x = e + t z` with `s⁻(z) <= 1` scaled onto `V = eta`; checks `V̇ > 0`.
fn level_check(
    model: &Model,
    e: &[f64],
    s_delta: &Mat,
    eta: f64,
    count: usize,
    seed: u64,
) -> Result<LevelCheck, LyapunovError> {
    let n = e.len();
    let mut r = rng(seed);
    let mut tested = 0;
    let mut rejected = 0;
    let mut min_vdot = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let max_draws = 100 * count.max(1);
    while tested < count && tested + rejected < max_draws {
        let z = sample_two_cone(&mut r, n);
        let q = mat_vec(s_delta, &z);
        let v = level(&q);
        if v == 0.0 {
            rejected += 1;
            continue;
        }
        let t = (eta / v).sqrt();
        let x: Vec<f64> = e.iter().zip(&z).map(|(ei, zi)| ei + t * zi).collect();
        if !model.bounds.contains(&x) {
            rejected += 1;
            continue;
        }
        let qs: Vec<f64> = q.iter().map(|qi| t * qi).collect();
        let qdot = mat_vec(s_delta, &model.field(&x)?);
        let vdot = qs[0] * qdot[0] + qs[1] * qdot[1];
        min_vdot = min_vdot.min(vdot);
        min_ratio = min_ratio.min(vdot / eta);
        tested += 1;
    }
    Ok(LevelCheck {
        eta,
        tested,
        rejected,
        min_vdot,
        min_vdot_over_v: min_ratio,
        passed: tested == count && min_vdot > 0.0,
    })
}

/// Trajectories from `s⁻(a - e) <= 1`, `V >= eta_ref / 2` must keep `V >= eta_ref / 4`.
fn invariance_check(
    model: &Model,
    e: &[f64],
    s_delta: &Mat,
    eta_ref: f64,
    sampling: &LyapunovSampling,
) -> Result<InvarianceCheck, LyapunovError> {
    let n = e.len();
    let region = sampling.start_region.as_ref().unwrap_or(&model.bounds);
    let mut r = rng(sampling.seed ^ 0x1A_7A11);
    let mut starts = Vec::with_capacity(sampling.trajectories);
    let mut draws = 0usize;
    while starts.len() < sampling.trajectories && draws < 1_000_000 {
        draws += 1;
        let a: Vec<f64> = (0..n)
            .map(|i| region.lower[i] + (region.upper[i] - region.lower[i]) * r.random::<f64>())
            .collect();
        let z: Vec<f64> = a.iter().zip(e).map(|(p, q)| p - q).collect();
        if s_minus_of_difference(&a, e) <= 1 && level(&mat_vec(s_delta, &z)) >= 0.5 * eta_ref {
            starts.push(a);
        }
    }
    let floor = 0.25 * eta_ref;
    let opts = OdeOptions::default();
    let mins: Vec<f64> = starts
        .par_iter()
        .map(|a| -> Result<f64, LyapunovError> {
            let traj = integrate(model, a, sampling.trajectory_horizon, &opts, None)?;
            Ok(traj
                .states
                .iter()
                .map(|x| {
                    let z: Vec<f64> = x.iter().zip(e).map(|(p, q)| p - q).collect();
                    level(&mat_vec(s_delta, &z))
                })
                .fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<_, _>>()?;
    let min_level = mins.into_iter().fold(f64::INFINITY, f64::min);
    Ok(InvarianceCheck {
        trajectories: starts.len(),
        horizon: sampling.trajectory_horizon,
        floor,
        min_level,
        passed: starts.len() == sampling.trajectories && min_level >= floor,
    })
}
