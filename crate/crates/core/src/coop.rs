//! Sign patterns, irreducibility and sampled certification of (strong) k-cooperativity.
//!
//! A system is certified k-cooperative on its box when the Jacobian matches the
//! pattern `Ā_k` at every sample; strongly so when, in addition, the Jacobian is
//! irreducible at every sample strictly inside the box. Because sign patterns are
//! closed under sums, the same then holds for the averaged Jacobian along any
//! segment, which is the variational matrix of a pair of trajectories.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{norm_inf, Mat};
use crate::models::{BoxDomain, Model, ModelError, ModelKind};
use crate::ode::{integrate, OdeError, OdeOptions};
use crate::sampling::box_samples;

/// Default number of low-discrepancy samples (the centre and corners come on top).
pub const DEFAULT_SAMPLES: usize = 4096;
/// Gauss-Legendre order for variational matrices.
pub const DEFAULT_QUADRATURE_POINTS: usize = 32;
/// Violations kept in a certificate; the total is always counted.
const MAX_REPORTED_VIOLATIONS: usize = 64;

#[derive(Debug, Error)]
pub enum CoopError {
    #[error("matrix is {got}x{got2}, pattern is {expected}x{expected}")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        got2: usize,
    },
    #[error("k must be 1 or 2, got {0}")]
    BadK(usize),
    #[error("state {0:?} is outside the model box")]
    OutOfDomain(Vec<f64>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Cell {
    /// `a_ij <= 0`
    Neg,
    Zero,
    /// `a_ij >= 0`
    Pos,
    Any,
}

impl Cell {
    fn admits(self, v: f64, tau: f64) -> bool {
        match self {
            Cell::Neg => v <= tau,
            Cell::Zero => v.abs() <= tau,
            Cell::Pos => v >= -tau,
            Cell::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignPattern {
    pub n: usize,
    /// Row-major.
    pub cells: Vec<Cell>,
}

impl SignPattern {
    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[i * self.n + j]
    }

    /// `Ā₁`: nonnegative off-diagonal (Metzler), free diagonal.
    pub fn metzler(n: usize) -> Self {
        let cells = (0..n * n)
            .map(|k| if k / n == k % n { Cell::Any } else { Cell::Pos })
            .collect();
        SignPattern { n, cells }
    }

    /// `Ā₂`: nonnegative sub/super-diagonal, nonpositive corners `(1,n)`, `(n,1)`,
    /// free diagonal, zero elsewhere. For `n <= 2` every matrix qualifies.
    pub fn two_cooperative(n: usize) -> Self {
        if n <= 2 {
            return SignPattern {
                n,
                cells: vec![Cell::Any; n * n],
            };
        }
        let mut cells = vec![Cell::Zero; n * n];
        for i in 0..n {
            cells[i * n + i] = Cell::Any;
            if i + 1 < n {
                cells[i * n + i + 1] = Cell::Pos;
                cells[(i + 1) * n + i] = Cell::Pos;
            }
        }
        cells[n - 1] = Cell::Neg;
        cells[(n - 1) * n] = Cell::Neg;
        SignPattern { n, cells }
    }

    pub fn for_k(k: usize, n: usize) -> Result<Self, CoopError> {
        match k {
            1 => Ok(Self::metzler(n)),
            2 => Ok(Self::two_cooperative(n)),
            _ => Err(CoopError::BadK(k)),
        }
    }
}

/// Entry that breaks a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellViolation {
    pub row: usize,
    pub col: usize,
    pub value: f64,
    pub expected: Cell,
}

/// First entry of `a` (row-major) that breaks `pattern` with slack `tau`, if any.
pub fn matches_pattern(
    a: &Mat,
    pattern: &SignPattern,
    tau: f64,
) -> Result<Option<CellViolation>, CoopError> {
    let n = pattern.n;
    if a.shape() != (n, n) {
        return Err(CoopError::DimensionMismatch {
            expected: n,
            got: a.nrows(),
            got2: a.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..n {
            let cell = pattern.get(i, j);
            let value = a[(i, j)];
            if !cell.admits(value, tau) {
                return Ok(Some(CellViolation {
                    row: i,
                    col: j,
                    value,
                    expected: cell,
                }));
            }
        }
    }
    Ok(None)
}

/// Strong connectivity of the graph with an edge `i -> j` whenever `|a_ij| > tau`, `i != j`.
pub fn is_irreducible(a: &Mat, tau: f64) -> bool {
    let n = a.nrows();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let v = if forward { a[(i, j)] } else { a[(j, i)] };
                if j != i && !seen[j] && v.abs() > tau {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach(true) && reach(false)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1, "need at least one quadrature node");
    let n = points;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(z) and P_{n-1}(z).
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        // Map from [-1, 1] to [0, 1].
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// `∫₀¹ J(r xa + (1 - r) xb) dr` by Gauss-Legendre quadrature.
pub fn variational_matrix_between(
    model: &Model,
    xa: &[f64],
    xb: &[f64],
    points: usize,
) -> Result<Mat, CoopError> {
    for x in [xa, xb] {
        if !model.bounds.contains(x) {
            return Err(CoopError::OutOfDomain(x.to_vec()));
        }
    }
    let n = model.dim();
    let (nodes, weights) = gauss_legendre(points);
    let mut m = Mat::zeros(n, n);
    let mut x = vec![0.0; n];
    for (r, w) in nodes.iter().zip(&weights) {
        for i in 0..n {
            x[i] = r * xa[i] + (1.0 - r) * xb[i];
        }
        m += model.jacobian(&x)? * *w;
    }
    Ok(m)
}

/// `M_{a,b}(t)`: the variational matrix between `x(t, a)` and `x(t, b)`.
pub fn variational_matrix(
    model: &Model,
    a: &[f64],
    b: &[f64],
    t: f64,
    points: usize,
    opts: &OdeOptions,
) -> Result<Mat, CoopError> {
    let (xa, xb) = if t > 0.0 {
        (
            integrate(model, a, t, opts, None)?.last().to_vec(),
            integrate(model, b, t, opts, None)?.last().to_vec(),
        )
    } else {
        (a.to_vec(), b.to_vec())
    };
    variational_matrix_between(model, &xa, &xb, points)
}

/// Irreducibility threshold used by [`certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum IrreducibilityTol {
    /// Any nonzero off-diagonal entry is an edge.
    Strict,
    /// Edges need `|a_ij| > c |A|_inf`.
    Relative(f64),
}

impl IrreducibilityTol {
    fn threshold(self, a: &Mat) -> f64 {
        match self {
            IrreducibilityTol::Strict => 0.0,
            IrreducibilityTol::Relative(c) => c * norm_inf(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifyOptions {
    pub k: usize,
    pub strong: bool,
    pub samples: usize,
    pub seed: u64,
    /// Slack on sign constraints.
    pub pattern_tol: f64,
    pub irreducibility_tol: IrreducibilityTol,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            k: 2,
            strong: true,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            pattern_tol: 0.0,
            irreducibility_tol: IrreducibilityTol::Strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Pattern,
    Reducible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub point: Vec<f64>,
    /// Offending cell for pattern violations.
    pub cell: Option<CellViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoopCertificate {
    pub model: String,
    pub k: usize,
    pub strong: bool,
    pub passed: bool,
    pub samples_checked: usize,
    pub interior_samples: usize,
    pub domain: BoxDomain,
    pub violation_count: usize,
    /// The first few violations, in sample order.
    pub violations: Vec<Violation>,
    /// Fraction of interior samples with an irreducible Jacobian.
    pub irreducibility_fraction: f64,
    /// The pattern also follows from the closed-form Jacobian.
    pub structural: bool,
    pub method: &'static str,
    pub seed: u64,
}

/// Whether the closed-form Jacobian of a built-in matches `Ā_k` on the whole box.
fn structural_pattern(model: &Model, k: usize) -> bool {
    matches!(
        (&model.kind, k),
        (ModelKind::Goodwin { .. }, 2) | (ModelKind::Rna(_), 2)
    )
}

/// Checks `Ā_k` (and irreducibility when `strong`) at the box centre, corners and Halton samples.
pub fn certify(model: &Model, opts: &CertifyOptions) -> Result<CoopCertificate, CoopError> {
    let n = model.dim();
    let pattern = SignPattern::for_k(opts.k, n)?;
    let b = &model.bounds;
    let points = box_samples(&b.lower, &b.upper, opts.samples, opts.seed);

    let results: Vec<(bool, Option<bool>, Option<Violation>)> = points
        .par_iter()
        .map(|x| -> Result<_, CoopError> {
            let j = model.jacobian(x)?;
            let interior = b.interior(x, 0.0);
            let cell = matches_pattern(&j, &pattern, opts.pattern_tol)?;
            let irreducible = interior.then(|| is_irreducible(&j, opts.irreducibility_tol.threshold(&j)));
            let violation = if let Some(c) = cell {
                Some(Violation {
                    kind: ViolationKind::Pattern,
                    point: x.clone(),
                    cell: Some(c),
                })
            } else if opts.strong && irreducible == Some(false) {
                Some(Violation {
                    kind: ViolationKind::Reducible,
                    point: x.clone(),
                    cell: None,
                })
            } else {
                None
            };
            Ok((interior, irreducible, violation))
        })
        .collect::<Result<_, _>>()?;

    let interior_samples = results.iter().filter(|r| r.0).count();
    let irreducible = results.iter().filter(|r| r.1 == Some(true)).count();
    let violation_count = results.iter().filter(|r| r.2.is_some()).count();
    let violations = results
        .into_iter()
        .filter_map(|r| r.2)
        .take(MAX_REPORTED_VIOLATIONS)
        .collect();
    Ok(CoopCertificate {
        model: model.name.clone(),
        k: opts.k,
        strong: opts.strong,
        passed: violation_count == 0,
        samples_checked: points.len(),
        interior_samples,
        domain: b.clone(),
        violation_count,
        violations,
        irreducibility_fraction: if interior_samples == 0 {
            0.0
        } else {
            irreducible as f64 / interior_samples as f64
        },
        structural: structural_pattern(model, opts.k),
        method: "sampled",
        seed: opts.seed,
    })
}
