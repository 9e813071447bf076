//! Dense eigen-analysis for the small Jacobians these systems produce.
//!
//! Eigenvalues come from a balanced Hessenberg reduction followed by the
//! Francis double-shift QR iteration. They are ordered by decreasing real part
//! with conjugate pairs adjacent (positive imaginary part first), which is the
//! ordering the spectral-gap test `Re(λ2) > Re(λ3)` refers to.
//!
//! [`spectral_split`] separates `R^n` into the two-dimensional invariant
//! subspace `W1` of `{λ1, λ2}` and its complementary invariant subspace `W2`,
//! and brings `A` into the block form `S A S^-1 = diag(Λ, Ψ)` with `Λ` in real
//! Jordan form.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{column, range_and_null, norm_inf, sym2_min_eig, to_rows, Mat};
use crate::sampling::gaussian;
use crate::signvar::{s_minus_tol, s_plus};

/// Largest matrix the QR iteration accepts.
pub const MAX_DIM: usize = 64;
/// Default threshold on `Re(λ2) - Re(λ3)`.
pub const DEFAULT_GAP_TOL: f64 = 1e-8;

const QR_ITERATIONS_PER_EIGENVALUE: usize = 60;
const W1_CIRCLE_SAMPLES: usize = 3600;
const W2_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("QR iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("matrix must be square with 1 <= n <= {MAX_DIM}, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("spectral splitting needs n >= 3, got {0}")]
    DimensionTooSmall(usize),
    #[error("spectral gap Re(λ2) - Re(λ3) = {gap:e} is below {tol:e}")]
    GapTooSmall { gap: f64, tol: f64 },
    #[error("dominant block has an eigenvalue with nonpositive real part ({re:e})")]
    NotUnstable { re: f64 },
    #[error("could not certify positive-definiteness of the scaled block")]
    ScalingFailed,
    #[error("singular change of basis")]
    Singular,
}

/// Spectrum ordered by decreasing real part, conjugates adjacent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderedSpectrum {
    #[serde(serialize_with = "serialize_complex_list")]
    pub eigenvalues: Vec<Complex64>,
    /// `ordering[i]` is the position the i-th sorted eigenvalue had in the raw QR output.
    pub ordering: Vec<usize>,
}

fn serialize_complex_list<S: serde::Serializer>(
    values: &[Complex64],
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for z in values {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

impl OrderedSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Spectral gap `Re(λ2) - Re(λ3)`; `None` for n < 3.
    pub fn gap(&self) -> Option<f64> {
        (self.len() >= 3).then(|| self.eigenvalues[1].re - self.eigenvalues[2].re)
    }
}

/// Result of [`unstable_count`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstabilityCount {
    pub count: usize,
    /// `min |Re(λ_i)|`, small values flag a verdict that may flip under perturbation.
    pub margin: f64,
}

/// Number of eigenvalues with `Re(λ) > tau`.
pub fn unstable_count(spec: &OrderedSpectrum, tau: f64) -> InstabilityCount {
    let count = spec.eigenvalues.iter().filter(|z| z.re > tau).count();
    let margin = spec
        .eigenvalues
        .iter()
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min);
    InstabilityCount { count, margin }
}

fn check_square(a: &Mat) -> Result<usize, SpectralError> {
    let (rows, cols) = a.shape();
    if rows != cols || rows == 0 || rows > MAX_DIM {
        return Err(SpectralError::BadShape { rows, cols });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    Ok(rows)
}

/// All eigenvalues of `a`, with multiplicity, in the canonical order.
pub fn eigenvalues(a: &Mat) -> Result<OrderedSpectrum, SpectralError> {
    let n = check_square(a)?;
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    let raw = hqr(&mut h)?;
    debug_assert_eq!(raw.len(), n);
    Ok(order_spectrum(raw))
}

fn order_spectrum(raw: Vec<Complex64>) -> OrderedSpectrum {
    let mut idx: Vec<usize> = (0..raw.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (raw[i], raw[j]);
        b.re.total_cmp(&a.re)
            .then(a.im.abs().total_cmp(&b.im.abs()))
            .then(b.im.total_cmp(&a.im))
    });
    // Conjugate pairs come out of the QR iteration with bitwise equal real parts,
    // so the sort keeps them adjacent. Snap the pair to exact conjugates.
    let mut eigenvalues: Vec<Complex64> = idx.iter().map(|&i| raw[i]).collect();
    let mut i = 0;
    while i + 1 < eigenvalues.len() {
        let (a, b) = (eigenvalues[i], eigenvalues[i + 1]);
        if a.im != 0.0 && a.re == b.re && (a.im + b.im).abs() <= 1e-12 * a.im.abs() {
            let im = 0.5 * (a.im - b.im);
            eigenvalues[i] = Complex64::new(a.re, im);
            eigenvalues[i + 1] = Complex64::new(a.re, -im);
            i += 2;
        } else {
            i += 1;
        }
    }
    OrderedSpectrum {
        eigenvalues,
        ordering: idx,
    }
}

/// Diagonal similarity scaling by powers of two so rows and columns have comparable norms.
fn balance(a: &mut Mat) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(a: &mut Mat) {
    let n = a.nrows();
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let alpha: f64 = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let beta = if x0 >= 0.0 { -alpha } else { alpha };
        for i in 0..n {
            v[i] = 0.0;
        }
        v[k + 1] = x0 - beta;
        for i in k + 2..n {
            v[i] = a[(i, k)];
        }
        let vnorm2: f64 = v[k + 1..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- (I - 2vv^T/v^Tv) A (I - 2vv^T/v^Tv)
        for j in 0..n {
            let dot: f64 = (k + 1..n).map(|i| v[i] * a[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k + 1..n {
                a[(i, j)] -= f * v[i];
            }
        }
        for i in 0..n {
            let dot: f64 = (k + 1..n).map(|j| a[(i, j)] * v[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in k + 1..n {
                a[(i, j)] -= f * v[j];
            }
        }
        a[(k + 1, k)] = beta;
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
fn hqr(a: &mut Mat) -> Result<Vec<Complex64>, SpectralError> {
    let n = a.nrows();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut its = 0usize;
    let mut total_its = 0usize;
    let (mut p, mut q, mut r): (f64, f64, f64);
    while nn >= 0 {
        let nu = nn as usize;
        // Look for a negligible subdiagonal element.
        let mut l = nu;
        while l >= 1 {
            let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
            if s == 0.0 {
                s = anorm;
            }
            if a[(l, l - 1)].abs() + s == s {
                a[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }
        let mut x = a[(nu, nu)];
        if l == nu {
            wr[nu] = x + t;
            wi[nu] = 0.0;
            nn -= 1;
            its = 0;
            continue;
        }
        let mut y = a[(nu - 1, nu - 1)];
        let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
        if l == nu - 1 {
            p = 0.5 * (y - x);
            q = p * p + w;
            let z = q.abs().sqrt();
            x += t;
            if q >= 0.0 {
                let z = p + sign(z, p);
                wr[nu - 1] = x + z;
                wr[nu] = if z != 0.0 { x - w / z } else { x + z };
                wi[nu - 1] = 0.0;
                wi[nu] = 0.0;
            } else {
                wr[nu - 1] = x + p;
                wr[nu] = x + p;
                wi[nu - 1] = z;
                wi[nu] = -z;
            }
            nn -= 2;
            its = 0;
            continue;
        }
        if its >= QR_ITERATIONS_PER_EIGENVALUE {
            return Err(SpectralError::NoConvergence {
                iterations: total_its,
            });
        }
        if its > 0 && its % 10 == 0 {
            // Exceptional shift.
            t += x;
            for i in 0..=nu {
                a[(i, i)] -= x;
            }
            let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        total_its += 1;
        let mut m = nu - 2;
        loop {
            let z = a[(m, m)];
            let rr = x - z;
            let s = y - z;
            p = (rr * s - w) / a[(m + 1, m)] + a[(m, m + 1)];
            q = a[(m + 1, m + 1)] - z - rr - s;
            r = a[(m + 2, m + 1)];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
            if u + v == v {
                break;
            }
            m -= 1;
        }
        for i in m + 2..=nu {
            a[(i, i - 2)] = 0.0;
            if i != m + 2 {
                a[(i, i - 3)] = 0.0;
            }
        }
        let mut k = m;
        while k + 1 <= nu {
            if k != m {
                p = a[(k, k - 1)];
                q = a[(k + 1, k - 1)];
                r = if k + 1 != nu { a[(k + 2, k - 1)] } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = sign((p * p + q * q + r * r).sqrt(), p);
            if s != 0.0 {
                if k == m {
                    if l != m {
                        a[(k, k - 1)] = -a[(k, k - 1)];
                    }
                } else {
                    a[(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nu {
                    let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                    if k + 1 != nu {
                        pp += r * a[(k + 2, j)];
                        a[(k + 2, j)] -= pp * z;
                    }
                    a[(k + 1, j)] -= pp * y;
                    a[(k, j)] -= pp * x;
                }
                let mmin = if nu < k + 3 { nu } else { k + 3 };
                for i in l..=mmin {
                    let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                    if k + 1 != nu {
                        pp += z * a[(i, k + 2)];
                        a[(i, k + 2)] -= pp * r;
                    }
                    a[(i, k + 1)] -= pp * q;
                    a[(i, k)] -= pp;
                }
            }
            k += 1;
        }
    }
    Ok(wr
        .into_iter()
        .zip(wi)
        .map(|(re, im)| Complex64::new(re, im))
        .collect())
}

/// Coefficients `[1, c1, ..., cn]` of `det(sI - A)` (Faddeev-LeVerrier).
pub fn characteristic_polynomial(a: &Mat) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = Mat::zeros(n, n);
    let id = Mat::identity(n, n);
    let mut c = 1.0;
    for k in 1..=n {
        m = a * &m + &id * c;
        let am = a * &m;
        c = -am.trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// `exp(A s)` by scaling and squaring with a diagonal [6/6] Padé approximant.
pub fn matrix_exp(a: &Mat, s: f64) -> Mat {
    let n = a.nrows();
    let x = a * s;
    let norm = norm_inf(&x);
    let mut squarings = 0i32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as i32;
    }
    let x = x * 2f64.powi(-squarings);
    // Padé coefficients c_k = (2q-k)! q! / ((2q)! k! (q-k)!), q = 6.
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let id = Mat::identity(n, n);
    let mut num = id.clone() * C[0];
    let mut den = id.clone() * C[0];
    let mut power = id;
    for (k, &c) in C.iter().enumerate().skip(1) {
        power = &power * &x;
        num += &power * c;
        let signed = if k % 2 == 0 { c } else { -c };
        den += &power * signed;
    }
    let mut e = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for |X| <= 0.5");
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}

/// Shape of the real Jordan form of `A` restricted to `W1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockCase {
    /// `diag(u1, u2)`, `u1 >= u2`.
    RealDiagonal,
    /// `[[u, -v], [v, u]]`, `v != 0`.
    ComplexPair,
    /// `[[u, 1], [0, u]]`.
    JordanBlock,
}

/// Numerical checks attached to a split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitDiagnostics {
    /// `max |A w - P_W1 (A w)| / (|A| |w|)` over the W1 basis.
    pub invariance_residual_w1: f64,
    pub invariance_residual_w2: f64,
    /// `max |A v - λ v| / (|A| |v|)` over the eigenpairs spanning W1.
    pub eigen_residual: f64,
    /// Largest `s+` seen on a grid of the unit circle of W1 (at most 1 when `W1 \ {0} ⊆ P²₊`).
    pub w1_max_strong_variation: usize,
    pub w1_samples: usize,
    /// Smallest `s-` over random unit vectors of W2 (at least 2 when `W2 ∩ P²₋ = {0}`).
    pub w2_min_weak_variation: usize,
    pub w2_samples: usize,
    /// Smallest singular value of the stacked basis `[W1 | W2]`.
    pub basis_min_singular_value: f64,
}

/// `W1 ⊕ W2` splitting of a matrix with a spectral gap after the second eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSplit {
    pub spectrum: OrderedSpectrum,
    /// Basis of W1, one vector per row.
    pub w1: Vec<Vec<f64>>,
    /// Basis of W2, one vector per row.
    pub w2: Vec<Vec<f64>>,
    pub gap: f64,
    pub dominant_block: [[f64; 2]; 2],
    pub block_case: BlockCase,
    /// δ from [`delta_scaling`]; absent when the dominant block is not unstable.
    pub delta: Option<f64>,
    pub psi: Vec<Vec<f64>>,
    /// `S` with `S A S^-1 = diag(Λ, Ψ)`.
    pub transform: Vec<Vec<f64>>,
    pub diagnostics: SplitDiagnostics,
}

/// Splits `R^n` into the invariant subspaces of `{λ1, λ2}` and of the rest.
pub fn spectral_split(a: &Mat) -> Result<SpectralSplit, SpectralError> {
    spectral_split_with(a, DEFAULT_GAP_TOL)
}

pub fn spectral_split_with(a: &Mat, gap_tol: f64) -> Result<SpectralSplit, SpectralError> {
    let n = check_square(a)?;
    if n < 3 {
        return Err(SpectralError::DimensionTooSmall(n));
    }
    let spectrum = eigenvalues(a)?;
    let gap = spectrum.gap().expect("n >= 3");
    if !(gap >= gap_tol) {
        return Err(SpectralError::GapTooSmall { gap, tol: gap_tol });
    }
    let anorm = norm_inf(a).max(f64::MIN_POSITIVE);
    let (l1, l2) = (spectrum.eigenvalues[0], spectrum.eigenvalues[1]);

    // p(s) = (s - λ1)(s - λ2) is real because the gap keeps conjugates together.
    let tr = (l1 + l2).re;
    let det = (l1 * l2).re;
    let id = Mat::identity(n, n);
    let p_a = a * a - a * tr + &id * det;
    // ker p(A) = W1, ran p(A) = W2.
    let (range, null) = range_and_null(&p_a, n - 2);

    let restricted = null.transpose() * a * &null;
    let r = [
        [restricted[(0, 0)], restricted[(0, 1)]],
        [restricted[(1, 0)], restricted[(1, 1)]],
    ];
    let (block_case, p) = real_jordan_basis(r, l1, l2, anorm);
    let p = Mat::from_fn(2, 2, |i, j| p[(i, j)]);
    let w1_basis = &null * p;

    let mut t = Mat::zeros(n, n);
    t.view_mut((0, 0), (n, 2)).copy_from(&w1_basis);
    t.view_mut((0, 2), (n, n - 2)).copy_from(&range);
    let s = t.clone().try_inverse().ok_or(SpectralError::Singular)?;
    let blocks = &s * a * &t;
    let dominant_block = [
        [blocks[(0, 0)], blocks[(0, 1)]],
        [blocks[(1, 0)], blocks[(1, 1)]],
    ];
    let psi = blocks.view((2, 2), (n - 2, n - 2)).into_owned();
    let delta = delta_scaling(dominant_block, block_case).ok();

    let diagnostics = split_diagnostics(a, anorm, &w1_basis, &range, &t, block_case, l1, l2);

    Ok(SpectralSplit {
        w1: (0..2).map(|j| column(&w1_basis, j)).collect(),
        w2: (0..n - 2).map(|j| column(&range, j)).collect(),
        spectrum,
        gap,
        dominant_block,
        block_case,
        delta,
        psi: to_rows(&psi),
        transform: to_rows(&s),
        diagnostics,
    })
}

/// Columns `P` such that `P^-1 R P` is the real Jordan form of the 2x2 block `R`.
fn real_jordan_basis(
    r: [[f64; 2]; 2],
    l1: Complex64,
    l2: Complex64,
    anorm: f64,
) -> (BlockCase, nalgebra::Matrix2<f64>) {
    let tr = r[0][0] + r[1][1];
    let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
    let half = 0.5 * tr;
    let disc = half * half - det;
    let repeated_tol = 1e-6 * anorm;
    let rank_tol = 1e-8 * anorm;

    let near_repeated = (l1 - l2).norm() <= repeated_tol;
    if l1.im != 0.0 && !near_repeated {
        // Eigenvector of u - iv gives [Re w, Im w] with block [[u, -v], [v, u]].
        let v = (-disc).max(0.0).sqrt();
        let mu = Complex64::new(half, -v);
        let c1 = [Complex64::new(r[0][1], 0.0), mu - r[0][0]];
        let c2 = [mu - r[1][1], Complex64::new(r[1][0], 0.0)];
        let norm = |c: &[Complex64; 2]| (c[0].norm_sqr() + c[1].norm_sqr()).sqrt();
        let w = if norm(&c1) >= norm(&c2) { c1 } else { c2 };
        let scale = 1.0 / norm(&w);
        let p = nalgebra::Matrix2::new(w[0].re, w[0].im, w[1].re, w[1].im) * scale;
        return (BlockCase::ComplexPair, p);
    }
    if near_repeated {
        let u = half;
        let n0 = [[r[0][0] - u, r[0][1]], [r[1][0], r[1][1] - u]];
        let max_entry = n0.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_entry <= rank_tol {
            return (BlockCase::RealDiagonal, nalgebra::Matrix2::identity());
        }
        // Pick w with the largest image under (R - uI); v = (R - uI) w.
        let col0 = n0[0][0].hypot(n0[1][0]);
        let col1 = n0[0][1].hypot(n0[1][1]);
        let (w, v) = if col0 >= col1 {
            ([1.0, 0.0], [n0[0][0], n0[1][0]])
        } else {
            ([0.0, 1.0], [n0[0][1], n0[1][1]])
        };
        return (
            BlockCase::JordanBlock,
            nalgebra::Matrix2::new(v[0], w[0], v[1], w[1]),
        );
    }
    // Distinct real eigenvalues, larger first.
    let rad = disc.max(0.0).sqrt();
    let (u1, u2) = (half + rad, half - rad);
    let eigvec = |lam: f64| {
        let c1 = [r[0][1], lam - r[0][0]];
        let c2 = [lam - r[1][1], r[1][0]];
        if c1[0].hypot(c1[1]) >= c2[0].hypot(c2[1]) {
            c1
        } else {
            c2
        }
    };
    let (a1, a2) = (eigvec(u1), eigvec(u2));
    let p = nalgebra::Matrix2::new(a1[0], a2[0], a1[1], a2[1]);
    (BlockCase::RealDiagonal, normalize_columns(p))
}

fn normalize_columns(mut p: nalgebra::Matrix2<f64>) -> nalgebra::Matrix2<f64> {
    for j in 0..2 {
        let norm = p.column(j).norm();
        if norm > 0.0 {
            p.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    p
}

#[allow(clippy::too_many_arguments)]
fn split_diagnostics(
    a: &Mat,
    anorm: f64,
    w1: &Mat,
    w2: &Mat,
    t: &Mat,
    case: BlockCase,
    l1: Complex64,
    l2: Complex64,
) -> SplitDiagnostics {
    let n = a.nrows();
    let invariance = |basis: &Mat| -> f64 {
        // Least-squares projection onto span(basis).
        let q = basis.clone().qr().q();
        let mut worst = 0.0_f64;
        for j in 0..basis.ncols() {
            let w = basis.column(j);
            let aw = a * w;
            let proj = &q * (q.transpose() * &aw);
            let res = (&aw - proj).norm() / (anorm * w.norm());
            worst = worst.max(res);
        }
        worst
    };

    let eigen_residual = match case {
        BlockCase::ComplexPair => {
            // w = b1 + i b2 is an eigenvector for conj(λ1).
            let b1 = w1.column(0);
            let b2 = w1.column(1);
            let lam = l1.conj();
            let re = a * b1 - (b1 * lam.re - b2 * lam.im);
            let im = a * b2 - (b2 * lam.re + b1 * lam.im);
            (re.norm_squared() + im.norm_squared()).sqrt()
                / (anorm * (b1.norm_squared() + b2.norm_squared()).sqrt())
        }
        BlockCase::RealDiagonal => {
            let mut worst = 0.0_f64;
            let restricted_eigs = [l1.re, l2.re];
            for j in 0..2 {
                let w = w1.column(j);
                // Columns are eigenvectors for λ1, λ2 in order (or both for a repeated value).
                let res = (a * w - w * restricted_eigs[j]).norm() / (anorm * w.norm());
                worst = worst.max(res);
            }
            worst
        }
        BlockCase::JordanBlock => {
            let w = w1.column(0);
            (a * w - w * l1.re).norm() / (anorm * w.norm())
        }
    };

    let mut rng = crate::sampling::rng(0x5eed_0002);
    let mut w1_max = 0;
    for k in 0..W1_CIRCLE_SAMPLES {
        let th = std::f64::consts::TAU * k as f64 / W1_CIRCLE_SAMPLES as f64;
        let x: Vec<f64> = (0..n)
            .map(|i| th.cos() * w1[(i, 0)] + th.sin() * w1[(i, 1)])
            .collect();
        w1_max = w1_max.max(s_plus(&x));
    }
    let mut w2_min = usize::MAX;
    for _ in 0..W2_SAMPLES {
        let c: Vec<f64> = (0..w2.ncols()).map(|_| gaussian(&mut rng)).collect();
        let x: Vec<f64> = (0..n)
            .map(|i| (0..w2.ncols()).map(|j| c[j] * w2[(i, j)]).sum())
            .collect();
        let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        w2_min = w2_min.min(s_minus_tol(&x, 1e-12 * scale));
    }
    let basis_min_singular_value = t
        .clone()
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v));

    SplitDiagnostics {
        invariance_residual_w1: invariance(w1),
        invariance_residual_w2: invariance(w2),
        eigen_residual,
        w1_max_strong_variation: w1_max,
        w1_samples: W1_CIRCLE_SAMPLES,
        w2_min_weak_variation: w2_min,
        w2_samples: W2_SAMPLES,
        basis_min_singular_value,
    }
}

/// `diag(1, δ) Λ diag(1, 1/δ)`.
pub fn scaled_block(block: [[f64; 2]; 2], delta: f64) -> [[f64; 2]; 2] {
    [
        [block[0][0], block[0][1] / delta],
        [block[1][0] * delta, block[1][1]],
    ]
}

/// Picks δ so that the symmetric part of the scaled dominant block is positive-definite.
///
/// Real-diagonal and complex-pair blocks use δ = 1. A Jordan block `[[u, 1], [0, u]]`
/// starts from the smallest power of two that is at least `1/u` and doubles until
/// the symmetric part certifies.
pub fn delta_scaling(block: [[f64; 2]; 2], case: BlockCase) -> Result<f64, SpectralError> {
    let tr = block[0][0] + block[1][1];
    let det = block[0][0] * block[1][1] - block[0][1] * block[1][0];
    let half = 0.5 * tr;
    let disc = half * half - det;
    let min_re = if disc >= 0.0 { half - disc.sqrt() } else { half };
    if !(min_re > 0.0) {
        return Err(SpectralError::NotUnstable { re: min_re });
    }
    let certifies = |d: f64| sym2_min_eig(scaled_block(block, d)) > 0.0;
    match case {
        BlockCase::RealDiagonal | BlockCase::ComplexPair => {
            if certifies(1.0) {
                Ok(1.0)
            } else {
                Err(SpectralError::ScalingFailed)
            }
        }
        BlockCase::JordanBlock => {
            let u = half;
            let mut delta = 2f64.powi((1.0 / u).log2().ceil().max(0.0) as i32);
            for _ in 0..128 {
                if certifies(delta) {
                    return Ok(delta);
                }
                delta *= 2.0;
            }
            Err(SpectralError::ScalingFailed)
        }
    }
}

/// Dominant real eigenpair, eigenvector normalised to a positive entry sum.
///
/// This is the one-dimensional analogue of [`spectral_split`]; for a positive
/// matrix it is the Perron pair.
pub fn perron_pair(a: &Mat) -> Result<(f64, Vec<f64>), SpectralError> {
    let n = check_square(a)?;
    let spectrum = eigenvalues(a)?;
    let l1 = spectrum.eigenvalues[0];
    if l1.im != 0.0 {
        return Err(SpectralError::GapTooSmall { gap: 0.0, tol: 0.0 });
    }
    let shifted = a - Mat::identity(n, n) * l1.re;
    let (_, null) = range_and_null(&shifted, n - 1);
    let mut v = column(&null, 0);
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok((l1.re, v))
}
