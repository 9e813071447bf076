use std::collections::BTreeMap;

use coop2::modeldsl::{eval, parse, parse_checked, EvalError, ModelConfig, ParseError};
use coop2::sampling::rng;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn random_bytes_never_panic() {
    const ALPHABET: &[u8] = b"x1234567890.+-*/^()e exp ab_\n\t";
    let mut r = rng(99);
    let mut parsed = 0;
    for _ in 0..100_000 {
        let len = r.random_range(0..40);
        let bytes: Vec<u8> = (0..len)
            .map(|_| {
                if r.random::<f64>() < 0.9 {
                    ALPHABET[r.random_range(0..ALPHABET.len())]
                } else {
                    r.random()
                }
            })
            .collect();
        let src = String::from_utf8_lossy(&bytes);
        if let Ok(e) = parse(&src) {
            parsed += 1;
            // Printing and reparsing is a fixed point.
            let printed = e.to_string();
            let again = parse(&printed).unwrap_or_else(|err| panic!("{src:?} -> {printed:?}: {err}"));
            assert_eq!(again.to_string(), printed);
        }
    }
    assert!(parsed > 100, "only {parsed} inputs parsed");
}

#[test]
fn deep_nesting_is_rejected_not_overflowed() {
    let src = format!("{}x1{}", "(".repeat(100_000), ")".repeat(100_000));
    assert!(matches!(parse(&src), Err(ParseError::SyntaxError { .. })));
    let src = format!("{}x1", "-".repeat(100_000));
    assert!(parse(&src).is_err());
}

#[test]
fn precedence_table() {
    let p = BTreeMap::new();
    let cases = [
        ("1+2*3", 7.0),
        ("(1+2)*3", 9.0),
        ("1-2-3", -4.0),
        ("8/4/2", 1.0),
        ("-2^2", -4.0),
        ("2^3^2", 64.0),
        ("2*-3", -6.0),
        ("2^-1", 0.5),
        ("exp(0)*5", 5.0),
        ("--3", 3.0),
        ("1.5e1/3", 5.0),
    ];
    for (src, want) in cases {
        let got = eval(&parse(src).unwrap(), &[], &p).unwrap();
        assert_eq!(got, want, "{src}");
    }
}

#[test]
fn errors_carry_positions() {
    match parse("x1 + \n  (x2 * )") {
        Err(ParseError::SyntaxError { line, column, .. }) => assert_eq!((line, column), (2, 9)),
        other => panic!("{other:?}"),
    }
    let known = ["k".to_string()].into_iter().collect();
    match parse_checked("k*x1 + q", 1, &known) {
        Err(ParseError::UnknownIdentifier { name, .. }) => assert_eq!(name, "q"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        eval(&parse("1/(x1-x1)").unwrap(), &[2.0], &BTreeMap::new()),
        Err(EvalError::DivisionNearZero)
    ));
}

#[test]
fn config_rejects_unknown_fields_and_bad_dims() {
    assert!(ModelConfig::from_json(r#"{"name":"a","dim":1,"field":["x1"],"box":{"lower":[0],"upper":[1]},"extra":1}"#).is_err());
    let cfg = ModelConfig::from_json(r#"{"name":"a","dim":2,"field":["x1"],"box":{"lower":[0,0],"upper":[1,1]}}"#).unwrap();
    assert!(cfg.compile().is_err());
    let cfg = ModelConfig::from_json(r#"{"name":"a","dim":1,"field":["x2"],"box":{"lower":[0],"upper":[1]}}"#).unwrap();
    assert!(cfg.compile().is_err());
}

/// Independent expression tree with its own evaluator.
#[derive(Debug, Clone)]
enum T {
    C(f64),
    X(usize),
    Neg(Box<T>),
    Add(Box<T>, Box<T>),
    Sub(Box<T>, Box<T>),
    Mul(Box<T>, Box<T>),
    Div(Box<T>, Box<T>),
    Pow(Box<T>, i32),
}

impl T {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            T::C(c) => *c,
            T::X(i) => x[*i],
            T::Neg(a) => -a.value(x),
            T::Add(a, b) => a.value(x) + b.value(x),
            T::Sub(a, b) => a.value(x) - b.value(x),
            T::Mul(a, b) => a.value(x) * b.value(x),
            T::Div(a, b) => a.value(x) / b.value(x),
            T::Pow(a, k) => a.value(x).powi(*k),
        }
    }

    fn source(&self) -> String {
        match self {
            T::C(c) => format!("{c}"),
            T::X(i) => format!("x{}", i + 1),
            T::Neg(a) => format!("(-{})", a.source()),
            T::Add(a, b) => format!("({} + {})", a.source(), b.source()),
            T::Sub(a, b) => format!("({}-{})", a.source(), b.source()),
            T::Mul(a, b) => format!("({} *{})", a.source(), b.source()),
            T::Div(a, b) => format!("({}/ {})", a.source(), b.source()),
            T::Pow(a, k) => format!("({})^{k}", a.source()),
        }
    }
}

fn tree() -> impl Strategy<Value = T> {
    let leaf = prop_oneof![(0.5..4.0f64).prop_map(T::C), (0usize..3).prop_map(T::X)];
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| T::Neg(Box::new(a))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| T::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| T::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| T::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| T::Div(Box::new(a), Box::new(b))),
            (inner, -2i32..=3).prop_map(|(a, k)| T::Pow(Box::new(a), k)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn parser_agrees_with_oracle(t in tree(), x in prop::collection::vec(0.5..2.0f64, 3)) {
        let want = t.value(&x);
        prop_assume!(want.is_finite());
        let e = parse(&t.source()).unwrap();
        match eval(&e, &x, &BTreeMap::new()) {
            Ok(got) => prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", got, want),
            Err(EvalError::DivisionNearZero) => {}
            Err(err) => prop_assert!(false, "{}", err),
        }
    }
}
