use coop2::signvar::{s_minus, s_minus_tol, s_plus, s_plus_exhaustive, sigma, SignVarError};
use proptest::prelude::*;

/// Sign changes after deleting zeros.
fn oracle_minus(x: &[f64]) -> usize {
    let signs: Vec<bool> = x.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Maximum sign changes over every ±1 completion of the zeros.
fn oracle_plus(x: &[f64]) -> usize {
    let zeros: Vec<usize> = (0..x.len()).filter(|&i| x[i] == 0.0).collect();
    let mut best = 0;
    for mask in 0..(1u32 << zeros.len()) {
        let mut y = x.to_vec();
        for (b, &i) in zeros.iter().enumerate() {
            y[i] = if mask >> b & 1 == 1 { 1.0 } else { -1.0 };
        }
        best = best.max(y.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count());
    }
    best
}

fn vec_with_zeros() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![2 => Just(0.0), 5 => -10.0..10.0f64],
        1..12,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn bounds_and_oracles(x in vec_with_zeros()) {
        let n = x.len();
        let lo = s_minus(&x);
        let hi = s_plus(&x);
        prop_assert!(lo <= hi && hi <= n - 1);
        prop_assert_eq!(lo, oracle_minus(&x));
        prop_assert_eq!(hi, oracle_plus(&x));
    }

    #[test]
    fn homogeneous(x in vec_with_zeros(), c in prop_oneof![-5.0..-0.1f64, 0.1..5.0f64]) {
        let y: Vec<f64> = x.iter().map(|v| c * v).collect();
        prop_assert_eq!(s_minus(&y), s_minus(&x));
        prop_assert_eq!(s_plus(&y), s_plus(&x));
    }

    #[test]
    fn semicontinuity(x in vec_with_zeros(), dir in prop::collection::vec(-1.0..1.0f64, 12)) {
        // s⁻ can only go up and s⁺ only down under small perturbations.
        let scale = x.iter().filter(|v| **v != 0.0).fold(1.0_f64, |m, v| m.min(v.abs()));
        let y: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v + 1e-3 * scale * d).collect();
        prop_assert!(s_minus(&y) >= s_minus(&x));
        prop_assert!(s_plus(&y) <= s_plus(&x));
    }

    #[test]
    fn duality_with_alternating_signs(x in vec_with_zeros()) {
        // s⁻(x) + s⁺(D x) = n - 1 for D = diag(1, -1, 1, ...), x != 0.
        prop_assume!(x.iter().any(|v| *v != 0.0));
        let dx: Vec<f64> = x.iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -*v }).collect();
        prop_assert_eq!(s_minus(&x) + s_plus(&dx), x.len() - 1);
    }
}

#[test]
fn ternary_vectors_agree_with_enumeration() {
    for code in 0..3usize.pow(8) {
        let x: Vec<f64> = (0..8)
            .map(|i| [0.0, 2.0, -3.0][(code / 3usize.pow(i)) % 3])
            .collect();
        assert_eq!(s_plus(&x), s_plus_exhaustive(&x, 0.0).unwrap(), "{x:?}");
        assert_eq!(s_plus(&x), oracle_plus(&x), "{x:?}");
    }
}

#[test]
fn zero_vector_conventions() {
    assert_eq!(s_minus(&[0.0; 5]), 0);
    assert_eq!(s_plus(&[0.0; 5]), 4);
    assert!(matches!(sigma(&[1.0, 0.0]), Err(SignVarError::ZeroEntry { .. })));
}

#[test]
fn tolerance_treats_tiny_entries_as_zero() {
    let x = [1.0, -1e-14, 1.0];
    assert_eq!(s_minus(&x), 2);
    assert_eq!(s_minus_tol(&x, 1e-12), 0);
}
