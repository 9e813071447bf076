//! Long-time behaviour of single trajectories.
//!
//! [`classify`] integrates from `a`, drops a warm-up fraction, and then decides
//! between convergence to the equilibrium, convergence to a periodic orbit and
//! "undetermined". Periodicity is read off the upward crossings of the section
//! `x_c = e_c`: successive return points must agree and the tail must stay away
//! from `e`.

use rand::Rng;
use serde::Serialize;

use crate::coop::{certify, CertifyOptions, CoopCertificate, CoopError};
use crate::linalg::vec_norm_inf;
use crate::models::{equilibrium, uniqueness_probe, BoxDomain, Equilibrium, Model, UniquenessProbe};
use crate::ode::{integrate, s_minus_of_difference, OdeError, OdeOptions, Trajectory};
use crate::sampling::rng;

pub const DEFAULT_HORIZON: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifySettings {
    pub horizon: f64,
    /// Fraction of the horizon discarded before any test.
    pub warmup: f64,
    /// Section coordinate (0-based); the last coordinate when absent.
    pub section_coord: Option<usize>,
    /// Equilibrium radius relative to the box diameter.
    pub eq_tol_rel: f64,
    /// Largest accepted relative change between successive return points.
    pub return_tol: f64,
    /// Separation margin relative to the smaller of the box and tail diameters.
    pub separation_rel: f64,
    /// Number of trailing return-time gaps averaged into the period.
    pub period_gaps: usize,
    pub ode: OdeOptions,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        ClassifySettings {
            horizon: DEFAULT_HORIZON,
            warmup: 0.5,
            section_coord: None,
            eq_tol_rel: 1e-6,
            return_tol: 1e-4,
            separation_rel: 1e-3,
            period_gaps: 5,
            ode: OdeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Equilibrium,
    PeriodicOrbit,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitReport {
    pub verdict: Verdict,
    pub period: Option<f64>,
    /// Peak-to-peak per coordinate over the final cycle (final 10% of the window without one).
    pub amplitude: Vec<f64>,
    /// `min |x(t) - e|_inf` over the analysed tail.
    pub min_dist_to_e: f64,
    pub separation_margin: f64,
    /// Upward section crossing times in the tail.
    pub crossings: Vec<f64>,
    pub return_map_contraction: Option<f64>,
    /// `s⁻(a - e)`.
    pub basin_tag: usize,
    pub section_coord: usize,
    pub initial_state: Vec<f64>,
    pub equilibrium: Vec<f64>,
    pub settings: ClassifySettings,
}

/// Integrates from `a` over the horizon and classifies the tail.
pub fn classify(
    model: &Model,
    e: &[f64],
    a: &[f64],
    settings: &ClassifySettings,
) -> Result<(OrbitReport, Trajectory), OdeError> {
    let traj = integrate(model, a, settings.horizon, &settings.ode, Some(e))?;
    let report = classify_trajectory(&model.bounds, e, &traj, settings);
    Ok((report, traj))
}

/// Classifies an existing trajectory that starts at `traj.states[0]`.
pub fn classify_trajectory(
    bounds: &BoxDomain,
    e: &[f64],
    traj: &Trajectory,
    settings: &ClassifySettings,
) -> OrbitReport {
    let n = e.len();
    let a = traj.states[0].clone();
    let c = settings.section_coord.unwrap_or(n - 1);
    let t_end = traj.t_end();
    let t_tail = settings.warmup * t_end;
    let t_final = 0.9 * t_end;

    let tail: Vec<usize> = (0..traj.len()).filter(|&k| traj.times[k] >= t_tail).collect();
    let dist = |x: &[f64]| -> f64 {
        x.iter().zip(e).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    };
    let min_dist_to_e = tail
        .iter()
        .map(|&k| dist(&traj.states[k]))
        .fold(f64::INFINITY, f64::min);

    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for &k in &tail {
        for i in 0..n {
            lo[i] = lo[i].min(traj.states[k][i]);
            hi[i] = hi[i].max(traj.states[k][i]);
        }
    }
    let tail_diam = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| (h - l) * (h - l))
        .sum::<f64>()
        .sqrt();
    let separation_margin = settings.separation_rel * bounds.diam().min(tail_diam);

    let crossings = section_crossings(traj, c, e[c], t_tail);
    let basin_tag = s_minus_of_difference(&a, e);

    let eq_tol = settings.eq_tol_rel * bounds.diam();
    let settled = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= t_final)
        .all(|(_, x)| dist(x) < eq_tol);

    let mut report = OrbitReport {
        verdict: Verdict::Undetermined,
        period: None,
        amplitude: Vec::new(),
        min_dist_to_e,
        separation_margin,
        crossings: crossings.clone(),
        return_map_contraction: None,
        basin_tag,
        section_coord: c,
        initial_state: a,
        equilibrium: e.to_vec(),
        settings: *settings,
    };

    // An unstable `e` is left through roundoff alone, which says nothing about `a`.
    if settled || report.initial_state.as_slice() == e {
        report.verdict = Verdict::Equilibrium;
        report.amplitude = amplitude(traj, t_final, t_end);
        return report;
    }
    if crossings.len() <= 3 {
        report.amplitude = amplitude(traj, t_final, t_end);
        return report;
    }

    let gaps: Vec<f64> = crossings.windows(2).map(|w| w[1] - w[0]).collect();
    let recent = &gaps[gaps.len().saturating_sub(settings.period_gaps)..];
    let period = trimmed_mean(recent);
    report.period = Some(period);

    let m = crossings.len();
    let points: Vec<Vec<f64>> = crossings[m - 3..].iter().map(|&t| traj.eval(t)).collect();
    let step = |p: &[f64], q: &[f64]| -> f64 {
        p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let scale = dist(&points[1]).max(f64::MIN_POSITIVE);
    let contraction = step(&points[2], &points[1]).max(step(&points[1], &points[0])) / scale;
    report.return_map_contraction = Some(contraction);
    report.amplitude = amplitude(traj, crossings[m - 2], crossings[m - 1]);

    if contraction < settings.return_tol && min_dist_to_e > separation_margin && period > 0.0 {
        report.verdict = Verdict::PeriodicOrbit;
    }
    report
}

/// Times `t >= t_from` where `x_c - level` changes sign from negative to nonnegative.
pub fn section_crossings(traj: &Trajectory, c: usize, level: f64, t_from: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..traj.len().saturating_sub(1) {
        if traj.times[i] < t_from {
            continue;
        }
        let g0 = traj.states[i][c] - level;
        let g1 = traj.states[i + 1][c] - level;
        if g0 < 0.0 && g1 >= 0.0 {
            let (mut a, mut b) = (traj.times[i], traj.times[i + 1]);
            while b - a > 1e-10 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if traj.hermite(i, mid)[c] - level < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            out.push(0.5 * (a + b));
        }
    }
    out
}

/// Mean after dropping the smallest and largest value (plain mean for fewer than 3).
fn trimmed_mean(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let core = if s.len() >= 3 { &s[1..s.len() - 1] } else { &s[..] };
    core.iter().sum::<f64>() / core.len() as f64
}

/// Peak-to-peak per coordinate on `[t0, t1]`, from samples and dense output.
fn amplitude(traj: &Trajectory, t0: f64, t1: f64) -> Vec<f64> {
    let n = traj.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut add = |x: &[f64]| {
        for i in 0..n {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    };
    const DENSE: usize = 256;
    for k in 0..=DENSE {
        add(&traj.eval(t0 + (t1 - t0) * k as f64 / DENSE as f64));
    }
    for (t, x) in traj.times.iter().zip(&traj.states) {
        if *t >= t0 && *t <= t1 {
            add(x);
        }
    }
    lo.iter().zip(&hi).map(|(l, h)| h - l).collect()
}

/// Split of candidate initial states by `s⁻(a - e)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinPartition {
    /// `s⁻(a - e)` per candidate.
    pub tags: Vec<usize>,
    /// Indices with `s⁻(a - e) <= 1`.
    pub le1: Vec<usize>,
    /// Indices with `s⁻(a - e) >= 2`.
    pub ge2: Vec<usize>,
}

pub fn basin_filter(e: &[f64], candidates: &[Vec<f64>]) -> BasinPartition {
    let tags: Vec<usize> = candidates.iter().map(|a| s_minus_of_difference(a, e)).collect();
    let le1 = (0..tags.len()).filter(|&i| tags[i] <= 1).collect();
    let ge2 = (0..tags.len()).filter(|&i| tags[i] >= 2).collect();
    BasinPartition { tags, le1, ge2 }
}

/// `count` uniform points of `region` with `s⁻(a - e) <= 1` and `a != e`.
pub fn sample_basin(e: &[f64], region: &BoxDomain, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a: Vec<f64> = region
            .lower
            .iter()
            .zip(&region.upper)
            .map(|(l, u)| l + (u - l) * r.random::<f64>())
            .collect();
        if a.as_slice() != e && s_minus_of_difference(&a, e) <= 1 {
            out.push(a);
        }
    }
    out
}

/// `bounds ∩ Π [e_i - w_i, e_i + w_i]`.
pub fn region_around(bounds: &BoxDomain, e: &[f64], half_widths: &[f64]) -> BoxDomain {
    let lower = (0..e.len())
        .map(|i| (e[i] - half_widths[i]).max(bounds.lower[i]))
        .collect();
    let upper = (0..e.len())
        .map(|i| (e[i] + half_widths[i]).min(bounds.upper[i]))
        .collect();
    BoxDomain { lower, upper }
}

/// Start region for basin sampling: half-widths `max(2|e_i|, 0.01 (u_i - l_i))` around `e`.
///
/// Far corners of a wide invariant box (the RNA box reaches x1 = 22500) relax on
/// slow time scales and tell nothing extra about the basin.
pub fn default_basin_region(bounds: &BoxDomain, e: &[f64]) -> BoxDomain {
    let w: Vec<f64> = (0..e.len())
        .map(|i| (2.0 * e[i].abs()).max(0.01 * (bounds.upper[i] - bounds.lower[i])))
        .collect();
    region_around(bounds, e, &w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Checks, one by one, the hypotheses under which the basin converges to a periodic orbit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationReport {
    pub model: String,
    pub hypotheses: Vec<Hypothesis>,
    pub all_passed: bool,
    /// Present only when every hypothesis holds.
    pub prediction: Option<String>,
    pub equilibrium: Option<Equilibrium>,
    pub certificate: CoopCertificate,
    pub uniqueness: UniquenessProbe,
}

pub fn oscillation_check(model: &Model, certify_opts: &CertifyOptions) -> Result<OscillationReport, CoopError> {
    let opts = CertifyOptions {
        k: 2,
        strong: true,
        ..*certify_opts
    };
    let certificate = certify(model, &opts)?;
    let mut hypotheses = vec![Hypothesis {
        name: "strongly_2_cooperative",
        passed: certificate.passed,
        detail: format!(
            "{} samples, {} violations, irreducible fraction {}",
            certificate.samples_checked,
            certificate.violation_count,
            certificate.irreducibility_fraction
        ),
    }];

    let uniqueness = uniqueness_probe(model);
    let eq = equilibrium(model);
    let (eq_ok, eq_detail) = match &eq {
        Ok(eq) => (
            eq.in_interior && uniqueness.clusters.len() <= 1,
            format!(
                "e = {:?}, residual {:e}, {} distinct Newton solutions from {} starts",
                eq.e,
                eq.residual,
                uniqueness.clusters.len(),
                uniqueness.starts
            ),
        ),
        Err(err) => (false, err.to_string()),
    };
    hypotheses.push(Hypothesis {
        name: "unique_interior_equilibrium",
        passed: eq_ok,
        detail: eq_detail,
    });
    let eq = eq.ok();
    let (unstable_ok, unstable_detail) = match &eq {
        Some(eq) => (
            eq.unstable_count >= 2,
            format!(
                "{} eigenvalues with positive real part (margin {:e})",
                eq.unstable_count, eq.stability_margin
            ),
        ),
        None => (false, "no equilibrium".into()),
    };
    hypotheses.push(Hypothesis {
        name: "two_unstable_eigenvalues",
        passed: unstable_ok,
        detail: unstable_detail,
    });
    let all_passed = hypotheses.iter().all(|h| h.passed);
    Ok(OscillationReport {
        model: model.name.clone(),
        prediction: all_passed.then(|| {
            "every trajectory starting in the basin s-(a - e) <= 1, a != e, converges to a non-trivial periodic orbit".to_string()
        }),
        hypotheses,
        all_passed,
        equilibrium: eq,
        certificate,
        uniqueness,
    })
}

/// `|x - e|_inf`.
pub fn distance_to(x: &[f64], e: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(e).map(|(a, b)| a - b).collect();
    vec_norm_inf(&d)
}
