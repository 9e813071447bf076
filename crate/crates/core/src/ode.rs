//! Dormand-Prince 5(4) integration with PI step control and cubic Hermite dense output.
//!
//! Every accepted step is stored. When an equilibrium is attached, each sample is
//! annotated with `s⁻(x(t) - e)`, using the zero threshold `1e-10 |x - e|_inf`.
//!
//! States are kept in the model box: an exit by at most `1e3 * atol` is clamped
//! back (and counted), a larger one is an error. A start outside the box is
//! allowed; the check switches on once the trajectory has entered.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::models::{BoxDomain, Model, ModelError};
use crate::signvar::{s_minus_tol, trajectory_tau};

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("state left the box at t = {t} by {excess:e}")]
    LeftDomain { t: f64, excess: f64 },
    #[error("invalid integration request: {0}")]
    BadInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when absent.
    pub h0: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    /// Clamp and check against the model box.
    pub enforce_box: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-9,
            atol: 1e-12,
            h0: None,
            h_max: None,
            max_steps: 20_000_000,
            enforce_box: true,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        OdeOptions {
            rtol,
            atol,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), OdeError> {
        if !(self.rtol >= 1e-12 && self.atol >= 1e-14) {
            return Err(OdeError::BadInput(format!(
                "tolerances rtol = {:e}, atol = {:e} are below 1e-12 / 1e-14",
                self.rtol, self.atol
            )));
        }
        Ok(())
    }

    /// Box-exit distance that is still clamped rather than reported.
    pub fn clamp_slack(&self) -> f64 {
        1e3 * self.atol
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Samples pulled back onto the box.
    pub clamped: usize,
}

/// Accepted steps of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `f(x)` at each sample, used for Hermite interpolation.
    pub derivatives: Vec<Vec<f64>>,
    /// `s⁻(x(t) - e)` per sample; empty when no equilibrium was attached.
    pub s_minus_to_e: Vec<usize>,
    pub box_ok: Vec<bool>,
    /// First time the state was inside the box (0 for starts inside).
    pub entry_time: Option<f64>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one sample")
    }

    /// Index `i` with `times[i] <= t <= times[i+1]`.
    pub fn segment(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        k.clamp(1, self.times.len() - 1) - 1
    }

    /// Cubic Hermite interpolation on segment `i`.
    pub fn hermite(&self, i: usize, t: f64) -> Vec<f64> {
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        let (f0, f1) = (&self.derivatives[i], &self.derivatives[i + 1]);
        (0..y0.len())
            .map(|k| h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k])
            .collect()
    }

    /// Dense output at any `t` within the integrated range.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        if self.times.len() == 1 {
            return self.states[0].clone();
        }
        self.hermite(self.segment(t), t)
    }

    /// CSV with header `t,x1,...,xn,s_minus`; the last field is empty without an equilibrium.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.dim();
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",s_minus");
        writeln!(w, "{header}")?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut line = format_sci(*t);
            for v in x {
                line.push(',');
                line.push_str(&format_sci(*v));
            }
            line.push(',');
            if let Some(s) = self.s_minus_to_e.get(k) {
                line.push_str(&s.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// `printf("%.12e")` formatting.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.12e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

// Dormand-Prince coefficients; the nodes c_i are not needed for autonomous fields.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;

/// Box handling for one block of the (possibly stacked) state.
#[derive(Clone)]
struct BoxGuard<'a> {
    bounds: &'a BoxDomain,
    offset: usize,
    entered: bool,
}

/// Integrates `y' = rhs(y)` from 0 to `t_end`, landing exactly on every time in `stops`.
fn solve<F>(
    mut rhs: F,
    y0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    stops: &[f64],
    guards: &mut [BoxGuard<'_>],
) -> Result<Trajectory, OdeError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), OdeError>,
{
    opts.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(OdeError::BadInput(format!("t_end must be positive, got {t_end}")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::BadInput("initial state is not finite".into()));
    }
    let n = y0.len();
    let slack = opts.clamp_slack();
    let mut stats = StepStats::default();
    let mut entry_time = None;

    let mut y = y0.to_vec();
    let mut in_box = true;
    for g in guards.iter_mut() {
        let block = &y[g.offset..g.offset + g.bounds.dim()];
        g.entered = g.bounds.contains(block);
        in_box &= g.entered;
    }
    if in_box {
        entry_time = Some(0.0);
    }
    let mut f0 = vec![0.0; n];
    rhs(&y, &mut f0)?;
    stats.evaluations += 1;

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![y.clone()],
        derivatives: vec![f0.clone()],
        s_minus_to_e: Vec::new(),
        box_ok: vec![in_box],
        entry_time: None,
        stats,
    };

    let mut stop_iter = stops
        .iter()
        .copied()
        .filter(|&s| s > 0.0 && s < t_end)
        .peekable();

    let h_max = opts.h_max.unwrap_or(t_end).min(t_end);
    let mut h = match opts.h0 {
        Some(h) => h,
        None => initial_step(&mut rhs, &y, &f0, opts, &mut stats)?,
    }
    .min(h_max);
    let mut err_old: f64 = 1e-4;
    let mut t = 0.0;
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::MaxStepsExceeded {
                t,
                max_steps: opts.max_steps,
            });
        }
        while stop_iter.peek().is_some_and(|&s| s <= t) {
            stop_iter.next();
        }
        let target = stop_iter.peek().copied().unwrap_or(t_end);
        let mut landing = false;
        if t + h >= target || target - (t + h) < 1e-12 * target.abs().max(1.0) {
            h = target - t;
            landing = true;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(OdeError::StepUnderflow { t, h });
        }

        let mut stage = |coef: &[(f64, &[f64])], out: &mut [f64], c: &mut F| -> Result<bool, OdeError> {
            for i in 0..n {
                let mut acc = y[i];
                for (a, k) in coef {
                    acc += h * a * k[i];
                }
                tmp[i] = acc;
            }
            c(&tmp, out)?;
            Ok(out.iter().all(|v| v.is_finite()))
        };
        let mut finite = stage(&[(A21, &f0)], &mut k2, &mut rhs)?;
        finite &= stage(&[(A31, &f0), (A32, &k2)], &mut k3, &mut rhs)?;
        finite &= stage(&[(A41, &f0), (A42, &k2), (A43, &k3)], &mut k4, &mut rhs)?;
        finite &= stage(
            &[(A51, &f0), (A52, &k2), (A53, &k3), (A54, &k4)],
            &mut k5,
            &mut rhs,
        )?;
        finite &= stage(
            &[(A61, &f0), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            &mut k6,
            &mut rhs,
        )?;
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * f0[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(&y_new, &mut k7)?;
        stats.evaluations += 6;
        finite &= k7.iter().all(|v| v.is_finite()) && y_new.iter().all(|v| v.is_finite());

        let err = if finite {
            let mut acc = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * f0[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                acc += (e / sc) * (e / sc);
            }
            (acc / n as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            let t_new = if landing { target } else { t + h };
            let mut ok = true;
            let mut clamped = false;
            for g in guards.iter_mut() {
                let d = g.bounds.dim();
                let block = &mut y_new[g.offset..g.offset + d];
                if !g.entered {
                    g.entered = g.bounds.contains(block);
                    ok &= g.entered;
                    continue;
                }
                let excess = g.bounds.excess(block);
                if excess > slack {
                    return Err(OdeError::LeftDomain { t: t_new, excess });
                }
                if excess > 0.0 {
                    g.bounds.clamp(block);
                    clamped = true;
                }
            }
            if clamped {
                stats.clamped += 1;
                rhs(&y_new, &mut k7)?;
                stats.evaluations += 1;
            }
            if ok && entry_time.is_none() {
                entry_time = Some(t_new);
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut f0, &mut k7);
            stats.accepted += 1;
            traj.times.push(t);
            traj.states.push(y.clone());
            traj.derivatives.push(f0.clone());
            traj.box_ok.push(ok);

            let mut fac = SAFETY * err.max(1e-10).powf(-PI_ALPHA) * err_old.powf(PI_BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            err_old = err.max(1e-4);
            last_rejected = false;
            if !landing || t >= t_end {
                h *= fac;
            } else {
                // Landing steps are artificially short; keep the previous proposal scale.
                h = (h * fac).max(h);
            }
            h = h.min(h_max);
        } else {
            stats.rejected += 1;
            let fac = if err.is_finite() {
                (SAFETY * err.powf(-PI_ALPHA)).max(FAC_MIN)
            } else {
                0.1
            };
            h *= fac.min(1.0);
            last_rejected = true;
        }
    }
    traj.entry_time = entry_time;
    traj.stats = stats;
    Ok(traj)
}

/// Starting step from the usual two-evaluation heuristic.
fn initial_step<F>(
    rhs: &mut F,
    y: &[f64],
    f0: &[f64],
    opts: &OdeOptions,
    stats: &mut StepStats,
) -> Result<f64, OdeError>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<(), OdeError>,
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    rhs(&y1, &mut f1)?;
    stats.evaluations += 1;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    let h = (100.0 * h0).min(h1);
    Ok(if h.is_finite() && h > 0.0 { h } else { 1e-6 })
}

fn model_rhs(model: &Model) -> impl FnMut(&[f64], &mut [f64]) -> Result<(), OdeError> + '_ {
    move |x, out| model.eval_field(x, out).map_err(OdeError::from)
}

/// Integrates `model` from `a` over `[0, t_end]`.
pub fn integrate(
    model: &Model,
    a: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    equilibrium: Option<&[f64]>,
) -> Result<Trajectory, OdeError> {
    integrate_with_stops(model, a, t_end, opts, equilibrium, &[])
}

/// As [`integrate`], with accepted steps landing exactly on each time in `stops`.
pub fn integrate_with_stops(
    model: &Model,
    a: &[f64],
    t_end: f64,
    opts: &OdeOptions,
    equilibrium: Option<&[f64]>,
    stops: &[f64],
) -> Result<Trajectory, OdeError> {
    let n = model.dim();
    if a.len() != n {
        return Err(OdeError::BadInput(format!(
            "initial state has dimension {}, model has {n}",
            a.len()
        )));
    }
    let mut guards = if opts.enforce_box {
        vec![BoxGuard {
            bounds: &model.bounds,
            offset: 0,
            entered: false,
        }]
    } else {
        Vec::new()
    };
    let mut traj = solve(model_rhs(model), a, t_end, opts, stops, &mut guards)?;
    if let Some(e) = equilibrium {
        traj.s_minus_to_e = traj
            .states
            .iter()
            .map(|x| s_minus_of_difference(x, e))
            .collect();
    }
    Ok(traj)
}

/// `s⁻(x - y)` with the relative zero threshold used for trajectories.
pub fn s_minus_of_difference(x: &[f64], y: &[f64]) -> usize {
    let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    s_minus_tol(&z, trajectory_tau(&z))
}

/// Co-integrates `x(t, a)` and `x(t, b)` and reports `s⁻(x(t,a) - x(t,b))` on `t_grid`.
pub fn monitor_difference(
    model: &Model,
    a: &[f64],
    b: &[f64],
    t_grid: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<usize>, OdeError> {
    let n = model.dim();
    if a.len() != n || b.len() != n {
        return Err(OdeError::BadInput("initial states must match the model dimension".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(OdeError::BadInput("time grid must be nonnegative and increasing".into()));
    }
    let Some(&t_end) = t_grid.last() else {
        return Ok(Vec::new());
    };
    let mut y0 = a.to_vec();
    y0.extend_from_slice(b);
    let mut rhs = |y: &[f64], out: &mut [f64]| -> Result<(), OdeError> {
        let (oa, ob) = out.split_at_mut(n);
        model.eval_field(&y[..n], oa)?;
        model.eval_field(&y[n..], ob)?;
        Ok(())
    };
    let mut guards = if opts.enforce_box {
        vec![
            BoxGuard {
                bounds: &model.bounds,
                offset: 0,
                entered: false,
            },
            BoxGuard {
                bounds: &model.bounds,
                offset: n,
                entered: false,
            },
        ]
    } else {
        Vec::new()
    };
    let at = |y: &[f64]| s_minus_of_difference(&y[..n], &y[n..]);
    if t_end == 0.0 {
        return Ok(vec![at(&y0); t_grid.len()]);
    }
    let traj = solve(&mut rhs, &y0, t_end, opts, t_grid, &mut guards)?;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut k = 0;
    for &tg in t_grid {
        while k < traj.times.len() && traj.times[k] < tg {
            k += 1;
        }
        if k < traj.times.len() && traj.times[k] == tg {
            out.push(at(&traj.states[k]));
        } else {
            out.push(at(&traj.eval(tg)));
        }
    }
    Ok(out)
}
