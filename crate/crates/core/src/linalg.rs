//! Small dense helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Max row sum.
pub fn norm_inf(a: &Mat) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn vec_norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Row-major nested vectors, the layout used in JSON output.
pub fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

/// Column `j` as a plain vector.
pub fn column(a: &Mat, j: usize) -> Vec<f64> {
    a.column(j).iter().copied().collect()
}

/// Smallest eigenvalue of the symmetric part of a 2x2 matrix.
pub fn sym2_min_eig(m: [[f64; 2]; 2]) -> f64 {
    let a = m[0][0];
    let d = m[1][1];
    let b = 0.5 * (m[0][1] + m[1][0]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mean - rad
}

/// Orthonormal bases of `ran(p)` (first `rank` columns) and `ker(p)` (the rest),
/// from column-pivoted QR of `p` and of `p^T`.
pub fn range_and_null(p: &Mat, rank: usize) -> (Mat, Mat) {
    let n = p.nrows();
    let q_range = p.clone().col_piv_qr().q();
    let q_row = p.transpose().col_piv_qr().q();
    let range = q_range.columns(0, rank).into_owned();
    let null = q_row.columns(rank, n - rank).into_owned();
    (range, null)
}
