//! Vector fields with Jacobians and invariant boxes, plus equilibrium solvers.
//!
//! Built-ins: the `n`-dimensional Goodwin oscillator, the four-state RNA
//! oscillator, a linear test system `f(x) = A (x - c)`, and user fields from
//! the DSL.
//!
//! ```
//! use coop2::models::{goodwin, goodwin_equilibrium};
//!
//! let model = goodwin(4, vec![0.5; 4], 10).unwrap();
//! assert_eq!(model.bounds.upper, vec![2.0, 4.0, 8.0, 16.0]);
//! let eq = goodwin_equilibrium(&model).unwrap();
//! assert!((eq.e[3] - 1.2770).abs() < 1e-3);
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{from_rows, vec_norm_inf, Mat};
use crate::modeldsl::{ConfigError, DslField, EvalError, ModelConfig};
use crate::sampling::{halton, halton_points};
use crate::spectral::{eigenvalues, unstable_count, OrderedSpectrum, SpectralError};

/// `|f(e)|_inf` below which Newton stops.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;
const MULTISTART_POINTS: usize = 32;
const FRACTION_TO_BOUNDARY: f64 = 0.99;
const CLUSTER_RADIUS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("state has dimension {got}, model has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("field evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("operation needs a {expected} model")]
    WrongKind { expected: &'static str },
    #[error("Newton iteration did not converge from any start (best residual {best_residual:e})")]
    NoConvergence { best_residual: f64 },
    #[error("equilibrium {e:?} lies on the boundary of the box")]
    NotInterior { e: Vec<f64> },
    #[error("eigenvalue computation failed: {0}")]
    Spectral(#[from] SpectralError),
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(ModelError::BadParams("box bounds must have equal positive length".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(ModelError::BadParams("box needs finite lower < upper".into()));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// Strictly inside, with a relative margin of `rel` of each side length.
    pub fn interior(&self, x: &[f64], rel: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| {
                let m = rel * (u - l);
                *v > *l + m && *v < *u - m
            })
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Euclidean length of the diagonal.
    pub fn diam(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// Moves `x` onto the box; returns the largest correction applied.
    pub fn clamp(&self, x: &mut [f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = v.clamp(*l, *u);
            worst = worst.max((c - *v).abs());
            *v = c;
        }
        worst
    }

    /// Largest distance by which `x` lies outside the box (0 inside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// RNA oscillator rate constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnaParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub x2tot: f64,
    pub x4tot: f64,
}

impl RnaParams {
    pub const NAMES: [&'static str; 10] = [
        "kappa1", "kappa2", "beta1", "beta2", "delta1", "delta2", "gamma1", "gamma2", "x2tot",
        "x4tot",
    ];

    /// Parameter set with a stable oscillation.
    pub fn example3() -> Self {
        RnaParams {
            kappa1: 15.0,
            kappa2: 1.0,
            beta1: 0.2,
            beta2: 0.5,
            delta1: 0.01,
            delta2: 0.1,
            gamma1: 0.1,
            gamma2: 20.0,
            x2tot: 15.0,
            x4tot: 20.0,
        }
    }

    fn values(&self) -> [f64; 10] {
        [
            self.kappa1,
            self.kappa2,
            self.beta1,
            self.beta2,
            self.delta1,
            self.delta2,
            self.gamma1,
            self.gamma2,
            self.x2tot,
            self.x4tot,
        ]
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        Self::NAMES
            .iter()
            .zip(self.values())
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// Overrides named entries; unknown names are an error.
    pub fn with_overrides(mut self, kv: &BTreeMap<String, f64>) -> Result<Self, ModelError> {
        for (k, &v) in kv {
            let slot = match k.as_str() {
                "kappa1" => &mut self.kappa1,
                "kappa2" => &mut self.kappa2,
                "beta1" => &mut self.beta1,
                "beta2" => &mut self.beta2,
                "delta1" => &mut self.delta1,
                "delta2" => &mut self.delta2,
                "gamma1" => &mut self.gamma1,
                "gamma2" => &mut self.gamma2,
                "x2tot" => &mut self.x2tot,
                "x4tot" => &mut self.x4tot,
                _ => return Err(ModelError::BadParams(format!("unknown RNA parameter `{k}`"))),
            };
            *slot = v;
        }
        Ok(self)
    }

    pub fn x1tot(&self) -> f64 {
        self.kappa1 * self.x2tot / self.delta1
    }

    pub fn x3tot(&self) -> f64 {
        self.kappa2 * self.x4tot / self.delta2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Goodwin { alpha: Vec<f64>, m: u32 },
    Rna(RnaParams),
    /// `f(x) = A (x - offset)`.
    Linear { a: Mat, offset: Vec<f64> },
    Dsl(DslField),
}

/// A vector field on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub kind: ModelKind,
    pub bounds: BoxDomain,
    pub params: BTreeMap<String, f64>,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Writes `f(x)` into `out`.
    pub fn eval_field(&self, x: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        self.check_dim(x)?;
        let n = self.dim();
        match &self.kind {
            ModelKind::Goodwin { alpha, m } => {
                out[0] = -alpha[0] * x[0] + 1.0 / (1.0 + x[n - 1].powi(*m as i32));
                for i in 1..n {
                    out[i] = -alpha[i] * x[i] + x[i - 1];
                }
            }
            ModelKind::Rna(p) => {
                let s2 = p.x2tot - x[1];
                out[0] = p.kappa1 * x[1] - p.delta1 * x[0] - p.gamma2 * x[3] * x[0];
                out[1] = -p.beta1 * x[1] + p.gamma1 * s2 * x[2];
                out[2] = p.kappa2 * x[3] - p.delta2 * x[2] - p.gamma1 * s2 * x[2];
                out[3] = p.beta2 * (p.x4tot - x[3]) - p.gamma2 * x[3] * x[0];
            }
            ModelKind::Linear { a, offset } => {
                for i in 0..n {
                    out[i] = (0..n).map(|j| a[(i, j)] * (x[j] - offset[j])).sum();
                }
            }
            ModelKind::Dsl(f) => f.eval_into(x, out)?,
        }
        Ok(())
    }

    pub fn field(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.dim()];
        self.eval_field(x, &mut out)?;
        Ok(out)
    }

    /// Closed-form Jacobian for built-ins, central differences for DSL fields.
    pub fn jacobian(&self, x: &[f64]) -> Result<Mat, ModelError> {
        self.check_dim(x)?;
        let n = self.dim();
        Ok(match &self.kind {
            ModelKind::Goodwin { alpha, m } => {
                let mut j = Mat::zeros(n, n);
                for i in 0..n {
                    j[(i, i)] = -alpha[i];
                }
                for i in 1..n {
                    j[(i, i - 1)] = 1.0;
                }
                j[(0, n - 1)] = goodwin_corner(x[n - 1], *m);
                j
            }
            ModelKind::Rna(p) => {
                let s2 = p.x2tot - x[1];
                from_rows(&[
                    vec![-p.delta1 - p.gamma2 * x[3], p.kappa1, 0.0, -p.gamma2 * x[0]],
                    vec![0.0, -p.beta1 - p.gamma1 * x[2], p.gamma1 * s2, 0.0],
                    vec![0.0, p.gamma1 * x[2], -p.delta2 - p.gamma1 * s2, p.kappa2],
                    vec![-p.gamma2 * x[3], 0.0, 0.0, -p.beta2 - p.gamma2 * x[0]],
                ])
            }
            ModelKind::Linear { a, .. } => a.clone(),
            ModelKind::Dsl(f) => f.jacobian(x)?,
        })
    }
}

/// `d/dx_n 1/(1 + x_n^m) = -m x_n^(m-1) / (1 + x_n^m)^2`.
fn goodwin_corner(xn: f64, m: u32) -> f64 {
    let mi = m as i32;
    -(m as f64) * xn.powi(mi - 1) / (1.0 + xn.powi(mi)).powi(2)
}

/// Goodwin oscillator `x1' = -α1 x1 + 1/(1 + xn^m)`, `xi' = -αi xi + x(i-1)`.
pub fn goodwin(n: usize, alpha: Vec<f64>, m: u32) -> Result<Model, ModelError> {
    if n < 3 {
        return Err(ModelError::BadParams(format!("Goodwin needs n >= 3, got {n}")));
    }
    if alpha.len() != n {
        return Err(ModelError::BadParams(format!(
            "expected {n} alpha values, got {}",
            alpha.len()
        )));
    }
    if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(ModelError::BadParams("alpha values must be positive".into()));
    }
    if m == 0 {
        return Err(ModelError::BadParams("m must be at least 1".into()));
    }
    let mut upper = Vec::with_capacity(n);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        upper.push(1.0 / prod);
    }
    let mut params = BTreeMap::new();
    for (i, a) in alpha.iter().enumerate() {
        params.insert(format!("alpha{}", i + 1), *a);
    }
    params.insert("m".into(), m as f64);
    Ok(Model {
        name: format!("goodwin-n{n}-m{m}"),
        kind: ModelKind::Goodwin { alpha, m },
        bounds: BoxDomain::new(vec![0.0; n], upper)?,
        params,
    })
}

/// `Q(s) = α s^(m+1) + α s - 1` with `α = ∏ αi`.
pub fn goodwin_q(alpha_prod: f64, m: u32, s: f64) -> f64 {
    alpha_prod * s.powi(m as i32 + 1) + alpha_prod * s - 1.0
}

/// Unique positive root of `Q`, by bisection on `[0, 1/α + 1]`.
pub fn goodwin_root(alpha_prod: f64, m: u32) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0 / alpha_prod + 1.0);
    while hi - lo > 1e-14 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if goodwin_q(alpha_prod, m, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Equilibrium data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    pub e: Vec<f64>,
    pub residual: f64,
    pub in_interior: bool,
    pub spectrum: OrderedSpectrum,
    pub unstable_count: usize,
    /// `min |Re λ|` of `J(e)`.
    pub stability_margin: f64,
}

fn equilibrium_at(model: &Model, e: Vec<f64>) -> Result<Equilibrium, ModelError> {
    let residual = vec_norm_inf(&model.field(&e)?);
    let spectrum = eigenvalues(&model.jacobian(&e)?)?;
    let count = unstable_count(&spectrum, 0.0);
    Ok(Equilibrium {
        in_interior: model.bounds.interior(&e, 0.0),
        residual,
        spectrum,
        unstable_count: count.count,
        stability_margin: count.margin,
        e,
    })
}

/// Closed-form Goodwin equilibrium: `e_n` from `Q`, then `e_j = (∏_{k>j} α_k) e_n`.
pub fn goodwin_equilibrium(model: &Model) -> Result<Equilibrium, ModelError> {
    let ModelKind::Goodwin { alpha, m } = &model.kind else {
        return Err(ModelError::WrongKind { expected: "Goodwin" });
    };
    let n = alpha.len();
    let prod: f64 = alpha.iter().product();
    let en = goodwin_root(prod, *m);
    let mut e = vec![0.0; n];
    e[n - 1] = en;
    for j in (0..n - 1).rev() {
        e[j] = alpha[j + 1] * e[j + 1];
    }
    // Back-substitution can overshoot a face by an ulp when x_n^m is negligible.
    for (v, u) in e.iter_mut().zip(&model.bounds.upper) {
        *v = v.min(*u);
    }
    equilibrium_at(model, e)
}

/// RNA oscillator on `[0, x1tot] x [0, x2tot] x [0, x3tot] x [0, x4tot]`.
pub fn rna_oscillator(p: RnaParams) -> Result<Model, ModelError> {
    if p.values().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(ModelError::BadParams("RNA parameters must be positive".into()));
    }
    Ok(Model {
        name: "rna-oscillator".into(),
        kind: ModelKind::Rna(p),
        bounds: BoxDomain::new(
            vec![0.0; 4],
            vec![p.x1tot(), p.x2tot, p.x3tot(), p.x4tot],
        )?,
        params: p.to_map(),
    })
}

/// `f(x) = A (x - offset)` on the given box.
pub fn linear(a: Mat, offset: Vec<f64>, bounds: BoxDomain) -> Result<Model, ModelError> {
    let n = bounds.dim();
    if a.shape() != (n, n) || offset.len() != n {
        return Err(ModelError::BadParams("matrix, offset and box dimensions differ".into()));
    }
    Ok(Model {
        name: "linear".into(),
        kind: ModelKind::Linear { a, offset },
        bounds,
        params: BTreeMap::new(),
    })
}

/// Model from a DSL config.
pub fn from_config(cfg: &ModelConfig) -> Result<Model, ModelError> {
    let field = cfg.compile()?;
    Ok(Model {
        name: cfg.name.clone(),
        kind: ModelKind::Dsl(field),
        bounds: BoxDomain::new(cfg.bounds.lower.clone(), cfg.bounds.upper.clone())?,
        params: cfg.params.clone(),
    })
}

/// One damped Newton run; `None` if it stalls.
fn newton(model: &Model, x0: &[f64]) -> Option<(Vec<f64>, f64)> {
    let b = &model.bounds;
    let n = model.dim();
    let mut x = x0.to_vec();
    let mut f = model.field(&x).ok()?;
    let mut norm = vec_norm_inf(&f);
    for _ in 0..NEWTON_MAX_ITER {
        if norm <= EQUILIBRIUM_TOL {
            return Some((x, norm));
        }
        let j = model.jacobian(&x).ok()?;
        let rhs = nalgebra::DVector::from_iterator(n, f.iter().map(|v| -v));
        let dx = j.lu().solve(&rhs)?;
        // Largest step that keeps every coordinate strictly inside the box.
        let mut lam: f64 = 1.0;
        for i in 0..n {
            if dx[i] < 0.0 {
                lam = lam.min(FRACTION_TO_BOUNDARY * (x[i] - b.lower[i]) / -dx[i]);
            } else if dx[i] > 0.0 {
                lam = lam.min(FRACTION_TO_BOUNDARY * (b.upper[i] - x[i]) / dx[i]);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = (0..n).map(|i| x[i] + lam * dx[i]).collect();
            if let Ok(ft) = model.field(&trial) {
                let nt = vec_norm_inf(&ft);
                if nt < (1.0 - 1e-4 * lam) * norm || nt <= EQUILIBRIUM_TOL {
                    x = trial;
                    f = ft;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            return (norm <= EQUILIBRIUM_TOL).then_some((x, norm));
        }
    }
    (norm <= EQUILIBRIUM_TOL).then_some((x, norm))
}

fn multistart_points(model: &Model) -> Vec<Vec<f64>> {
    let b = &model.bounds;
    let n = model.dim();
    let mut pts = vec![b.center()];
    for i in 1..=MULTISTART_POINTS as u64 {
        let u = halton(i, n);
        pts.push(
            (0..n)
                .map(|k| b.lower[k] + (0.05 + 0.9 * u[k]) * (b.upper[k] - b.lower[k]))
                .collect(),
        );
    }
    pts
}

/// Damped Newton from `x0` (or the box centre), then from 32 interior Halton points.
pub fn find_equilibrium(model: &Model, x0: Option<&[f64]>) -> Result<Equilibrium, ModelError> {
    let mut starts = Vec::new();
    if let Some(x) = x0 {
        model.check_dim(x)?;
        starts.push(x.to_vec());
    }
    starts.extend(multistart_points(model));
    let mut best_residual = f64::INFINITY;
    for s in &starts {
        if !model.bounds.interior(s, 0.0) {
            continue;
        }
        match newton(model, s) {
            Some((e, _)) => {
                if !model.bounds.interior(&e, 1e-9) {
                    return Err(ModelError::NotInterior { e });
                }
                return equilibrium_at(model, e);
            }
            None => {
                if let Ok(f) = model.field(s) {
                    best_residual = best_residual.min(vec_norm_inf(&f));
                }
            }
        }
    }
    Err(ModelError::NoConvergence { best_residual })
}

/// Equilibrium for any model: closed form for Goodwin, Newton otherwise.
pub fn equilibrium(model: &Model) -> Result<Equilibrium, ModelError> {
    match model.kind {
        ModelKind::Goodwin { .. } => goodwin_equilibrium(model),
        _ => find_equilibrium(model, None),
    }
}

/// Newton solutions from every multi-start point, grouped by distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessProbe {
    pub starts: usize,
    pub converged: usize,
    /// One representative per cluster.
    pub clusters: Vec<Vec<f64>>,
}

impl UniquenessProbe {
    pub fn unique(&self) -> bool {
        self.clusters.len() == 1
    }
}

pub fn uniqueness_probe(model: &Model) -> UniquenessProbe {
    let starts = multistart_points(model);
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    let mut converged = 0;
    for s in &starts {
        if let Some((e, _)) = newton(model, s) {
            converged += 1;
            let scale = vec_norm_inf(&e).max(1.0);
            let known = clusters.iter().any(|c| {
                c.iter()
                    .zip(&e)
                    .all(|(a, b)| (a - b).abs() < CLUSTER_RADIUS * scale)
            });
            if !known {
                clusters.push(e);
            }
        }
    }
    UniquenessProbe {
        starts: starts.len(),
        converged,
        clusters,
    }
}

/// Outward-pointing field samples on the faces of the box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InflowReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest outward normal component seen.
    pub worst_outflow: f64,
}

/// Samples each face and checks that the normal component of `f` points inward or along it.
pub fn inflow_check(model: &Model, per_face: usize, seed: u64) -> Result<InflowReport, ModelError> {
    let b = &model.bounds;
    let n = model.dim();
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for face in 0..2 * n {
        let (i, upper) = (face / 2, face % 2 == 1);
        for mut x in halton_points(&b.lower, &b.upper, per_face, seed.wrapping_add(face as u64)) {
            x[i] = if upper { b.upper[i] } else { b.lower[i] };
            let f = model.field(&x)?;
            let outward = if upper { f[i] } else { -f[i] };
            let scale = vec_norm_inf(&f).max(1.0);
            worst = worst.max(outward);
            checked += 1;
            if outward > 1e-12 * scale {
                violations += 1;
            }
        }
    }
    Ok(InflowReport {
        checked,
        violations,
        worst_outflow: worst,
    })
}
