use coop2::coop::{Cell, SignPattern};
use coop2::linalg::{norm_inf, Mat};
use coop2::lyapunov::sample_two_cone;
use coop2::models::{goodwin, goodwin_equilibrium};
use coop2::sampling::rng;
use coop2::signvar::s_plus;
use coop2::spectral::{
    characteristic_polynomial, delta_scaling, eigenvalues, matrix_exp, perron_pair, scaled_block,
    spectral_split, BlockCase,
};
use coop2::linalg::sym2_min_eig;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn taylor_exp(a: &Mat, s: f64) -> Mat {
    let n = a.nrows();
    let mut term = Mat::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=40 {
        term = &term * a * (s / k as f64);
        sum += &term;
    }
    sum
}

/// Coefficients of `det(sI - A)` from determinants at `n + 1` nodes (Vandermonde solve).
fn charpoly_by_interpolation(a: &Mat) -> Vec<f64> {
    let n = a.nrows();
    let nodes: Vec<f64> = (0..=n).map(|k| k as f64 - n as f64 / 2.0).collect();
    let vals: Vec<f64> = nodes
        .iter()
        .map(|&s| (Mat::identity(n, n) * s - a).determinant())
        .collect();
    let v = Mat::from_fn(n + 1, n + 1, |i, j| nodes[i].powi((n - j) as i32));
    let c = v.lu().solve(&Mat::from_column_slice(n + 1, 1, &vals)).unwrap();
    c.iter().copied().collect()
}

/// Durand-Kerner iteration for a monic polynomial `[1, c1, ..., cn]`.
fn durand_kerner(c: &[f64]) -> Vec<Complex64> {
    let n = c.len() - 1;
    let p = |z: Complex64| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &k| acc * z + k);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * 1.5).collect();
    for _ in 0..2000 {
        let prev = roots.clone();
        for i in 0..n {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    den *= roots[i] - roots[j];
                }
            }
            let step = p(roots[i]) / den;
            roots[i] -= step;
        }
        if roots.iter().zip(&prev).all(|(a, b)| (a - b).norm() < 1e-15) {
            break;
        }
    }
    roots
}

fn random_matrix(r: &mut impl Rng, n: usize, scale: f64) -> Mat {
    Mat::from_fn(n, n, |_, _| scale * r.random_range(-1.0..1.0))
}

fn random_two_positive(r: &mut impl Rng, n: usize) -> Mat {
    let p = SignPattern::two_cooperative(n);
    Mat::from_fn(n, n, |i, j| match p.get(i, j) {
        Cell::Pos => r.random_range(0.1..1.0),
        Cell::Neg => -r.random_range(0.1..1.0),
        Cell::Zero => 0.0,
        Cell::Any => r.random_range(-2.0..2.0),
    })
}

#[test]
fn matrix_exp_matches_taylor() {
    let mut r = rng(1);
    for _ in 0..50 {
        let n = r.random_range(1..=6);
        let a = random_matrix(&mut r, n, 0.6);
        for s in [0.1, 0.5, 1.0] {
            let got = matrix_exp(&a, s);
            let want = taylor_exp(&a, s);
            let err = norm_inf(&(&got - &want)) / norm_inf(&want);
            assert!(err < 1e-12, "n = {n}, s = {s}, err = {err:e}");
        }
    }
}

#[test]
fn matrix_exp_semigroup() {
    let mut r = rng(2);
    let a = random_matrix(&mut r, 5, 3.0);
    let full = matrix_exp(&a, 2.0);
    let half = matrix_exp(&a, 1.0);
    let err = norm_inf(&(&full - &half * &half)) / norm_inf(&full);
    assert!(err < 1e-10, "{err:e}");
}

#[test]
fn eigenvalues_match_durand_kerner() {
    let mut r = rng(3);
    for _ in 0..40 {
        let n = r.random_range(2..=6);
        let a = random_matrix(&mut r, n, 1.0);
        let c = charpoly_by_interpolation(&a);
        let mine = characteristic_polynomial(&a);
        for (x, y) in c.iter().zip(&mine) {
            assert!((x - y).abs() < 1e-9, "{c:?} vs {mine:?}");
        }
        let roots = durand_kerner(&c);
        let spec = eigenvalues(&a).unwrap();
        for root in &roots {
            let d = spec
                .eigenvalues
                .iter()
                .map(|l| (l - root).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-6, "root {root} not in {:?}", spec.eigenvalues);
        }
        let tr: f64 = (0..n).map(|i| a[(i, i)]).sum();
        let sum: Complex64 = spec.eigenvalues.iter().sum();
        assert!((sum.re - tr).abs() < 1e-10 && sum.im.abs() < 1e-10);
    }
}

#[test]
fn real_eigenvalues_pass_inverse_iteration() {
    let mut r = rng(4);
    for _ in 0..30 {
        let n = r.random_range(2..=8);
        let a = random_matrix(&mut r, n, 1.0);
        for l in eigenvalues(&a).unwrap().eigenvalues {
            if l.im != 0.0 {
                continue;
            }
            let shifted = &a - Mat::identity(n, n) * (l.re + 1e-10);
            let lu = shifted.lu();
            let mut v = Mat::from_element(n, 1, 1.0);
            for _ in 0..5 {
                v = lu.solve(&v).unwrap();
                let norm = v.norm();
                v /= norm;
            }
            let res = (&a * &v - &v * l.re).norm();
            assert!(res < 1e-7 * norm_inf(&a).max(1.0), "λ = {}, residual {res:e}", l.re);
        }
    }
}

#[test]
fn ordering_is_by_real_part_with_conjugates_adjacent() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n = r.random_range(2..=10);
        let spec = eigenvalues(&random_matrix(&mut r, n, 1.0)).unwrap();
        let ev = &spec.eigenvalues;
        for w in ev.windows(2) {
            assert!(w[0].re >= w[1].re - 1e-12);
        }
        let mut i = 0;
        while i < ev.len() {
            if ev[i].im != 0.0 {
                assert!(ev[i].im > 0.0);
                assert_eq!(ev[i + 1], ev[i].conj());
                i += 2;
            } else {
                i += 1;
            }
        }
    }
}

#[test]
fn strongly_two_positive_exponentials_map_cone_inside() {
    let mut r = rng(6);
    for trial in 0..10 {
        let n = 3 + trial % 5;
        let a = random_two_positive(&mut r, n);
        for s in [0.1, 1.0, 5.0] {
            let e = matrix_exp(&a, s);
            for _ in 0..1000 {
                let z = sample_two_cone(&mut r, n);
                let y: Vec<f64> = (&e * Mat::from_column_slice(n, 1, &z)).iter().copied().collect();
                assert!(s_plus(&y) <= 1, "s = {s}, z = {z:?}, y = {y:?}");
            }
        }
        let split = spectral_split(&a).unwrap();
        assert!(split.gap > 0.0);
        let d = &split.diagnostics;
        assert!(d.invariance_residual_w1 <= 1e-8 && d.invariance_residual_w2 <= 1e-8, "{d:?}");
        assert!(d.w1_max_strong_variation <= 1 && d.w2_min_weak_variation >= 2, "{d:?}");
    }
}

#[test]
fn perron_pair_of_positive_matrices() {
    let mut r = rng(7);
    for _ in 0..30 {
        let n = r.random_range(2..=8);
        let a = Mat::from_fn(n, n, |_, _| r.random_range(0.05..1.0));
        let (l, v) = perron_pair(&a).unwrap();
        // Power iteration oracle.
        let mut x = Mat::from_element(n, 1, 1.0);
        let mut est = 0.0;
        for _ in 0..500 {
            let y = &a * &x;
            est = y.norm() / x.norm();
            x = &y / y.norm();
        }
        assert!((l - est).abs() < 1e-10 * est, "{l} vs {est}");
        assert!(v.iter().all(|c| *c > 0.0));
        let scale: f64 = x.iter().sum::<f64>() / v.iter().sum::<f64>();
        for i in 0..n {
            assert!((x[i] - scale * v[i]).abs() < 1e-8);
        }
    }
}

proptest! {
    #[test]
    fn goodwin_char_poly_coefficients_positive(
        n in 3usize..=7,
        m in 1u32..=12,
        alpha in prop::collection::vec(0.1..2.0f64, 7),
    ) {
        let model = goodwin(n, alpha[..n].to_vec(), m).unwrap();
        let e = goodwin_equilibrium(&model).unwrap().e;
        let c = characteristic_polynomial(&model.jacobian(&e).unwrap());
        prop_assert!(c.iter().all(|v| *v > 0.0), "{:?}", c);
    }

    #[test]
    fn jordan_delta_certifies(u in 0.01..5.0f64) {
        let block = [[u, 1.0], [0.0, u]];
        let d = delta_scaling(block, BlockCase::JordanBlock).unwrap();
        prop_assert!(sym2_min_eig(scaled_block(block, d)) > 0.0);
        prop_assert!(d >= 1.0 / u);
    }

    #[test]
    fn complex_and_diagonal_blocks_use_unit_delta(u in 0.01..5.0f64, v in 0.01..5.0f64) {
        prop_assert_eq!(delta_scaling([[u, -v], [v, u]], BlockCase::ComplexPair).unwrap(), 1.0);
        prop_assert_eq!(delta_scaling([[u + v, 0.0], [0.0, u]], BlockCase::RealDiagonal).unwrap(), 1.0);
    }
}
