//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Runs without the libtest harness so the lines are always printed.

use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use coop2::coop::SignPattern;
use coop2::linalg::{norm_inf, Mat};
use coop2::lyapunov::{build_certificate, sample_two_cone, LyapunovSampling};
use coop2::models::{equilibrium, goodwin, rna_oscillator, Model, RnaParams};
use coop2::ode::{monitor_difference, s_minus_of_difference, OdeOptions};
use coop2::orbit::{classify, default_basin_region, sample_basin, ClassifySettings, Verdict};
use coop2::sampling::rng;
use coop2::signvar::{s_minus, s_plus, s_plus_exhaustive};
use coop2::spectral::{characteristic_polynomial, eigenvalues, matrix_exp, spectral_split};

type Outcome = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > limit => Err(format!("{d}; took {took:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({took:.2?})"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {name}: {detail} ({took:.2?})");
            }
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

fn goodwin_example() -> Model {
    goodwin(4, vec![0.5; 4], 10).unwrap()
}

fn rna_example() -> Model {
    rna_oscillator(RnaParams::example3()).unwrap()
}

fn cli(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_coop2"))
        .args(args)
        .env_remove("COOP2_SEED")
        .output()
        .expect("run coop2");
    let json = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap_or(-1), json)
}

fn goodwin_equilibrium_criterion() -> Outcome {
    let eq = equilibrium(&goodwin_example()).map_err(|e| e.to_string())?;
    let want = [0.1596, 0.3192, 0.6385, 1.2770];
    check(close(eq.e[3], 1.2770, 1e-3), || format!("e4 = {}", eq.e[3]))?;
    for (g, w) in eq.e.iter().zip(want) {
        check(close(*g, w, 1e-3), || format!("e = {:?}", eq.e))?;
    }
    Ok(format!("e = {:.4?}", eq.e))
}

fn goodwin_spectrum_criterion() -> Outcome {
    let m = goodwin_example();
    let eq = equilibrium(&m).map_err(|e| e.to_string())?;
    let j = m.jacobian(&eq.e).map_err(|e| e.to_string())?;
    let spec = eigenvalues(&j).map_err(|e| e.to_string())?;
    let want = [(0.1158, 0.6158), (0.1158, -0.6158), (-1.1158, 0.6158), (-1.1158, -0.6158)];
    for (re, im) in want {
        check(
            spec.eigenvalues
                .iter()
                .any(|l| close(l.re, re, 1e-3) && close(l.im, im, 1e-3)),
            || format!("{re} {im:+}j missing from {:?}", spec.eigenvalues),
        )?;
    }
    check(eq.unstable_count == 2, || format!("unstable_count = {}", eq.unstable_count))?;
    let cp = characteristic_polynomial(&j);
    for (g, w) in cp[1..].iter().zip([2.0, 1.5, 0.5, 0.6376]) {
        check(close(*g, w, 1e-3), || format!("char poly {cp:?}"))?;
    }
    Ok(format!("λ1,2 = {:.4} ± {:.4}j, char poly {:.4?}", spec.eigenvalues[0].re, spec.eigenvalues[0].im, &cp[1..]))
}

fn rna_equilibrium_criterion() -> Outcome {
    let eq = equilibrium(&rna_example()).map_err(|e| e.to_string())?;
    for (g, w) in eq.e.iter().zip([3.4932, 0.6643, 0.0927, 0.1421]) {
        check(close(*g, w, 1e-3), || format!("e = {:?}", eq.e))?;
    }
    check(eq.unstable_count == 2, || format!("unstable_count = {}", eq.unstable_count))?;
    Ok(format!("e = {:.4?}, unstable_count = 2", eq.e))
}

/// Period from a 2000-unit run at tight tolerances, averaged over the second half.
fn period_oracle(model: &Model, a: &[f64]) -> f64 {
    let e = equilibrium(model).unwrap().e;
    let settings = ClassifySettings {
        horizon: 2000.0,
        ode: OdeOptions::with_tolerances(1e-12, 1e-14),
        period_gaps: usize::MAX,
        ..Default::default()
    };
    let (r, _) = classify(model, &e, a, &settings).unwrap();
    let c = &r.crossings;
    (c[c.len() - 1] - c[0]) / (c.len() - 1) as f64
}

fn simulate_criterion(preset: &str, model: Model, a: &[f64]) -> Outcome {
    let (code, report) = cli(&["simulate", "--preset", preset]);
    check(code == 0, || format!("exit code {code}"))?;
    check(report["verdict"] == "PeriodicOrbit", || format!("verdict {}", report["verdict"]))?;
    let contraction = report["return_map_contraction"].as_f64().unwrap_or(f64::INFINITY);
    check(contraction < 1e-4, || format!("contraction {contraction:e}"))?;
    let period = report["period"].as_f64().ok_or("no period")?;
    let oracle = period_oracle(&model, a);
    let rel = (period - oracle).abs() / oracle;
    check(rel < 1e-3, || format!("period {period} vs oracle {oracle}"))?;
    Ok(format!("PeriodicOrbit, period {period:.4} (oracle {oracle:.4}, rel {rel:.1e}), contraction {contraction:.1e}"))
}

fn certify_criterion() -> Outcome {
    let mut details = Vec::new();
    for preset in ["example2", "example3"] {
        let (code, cert) = cli(&["certify", "--preset", preset, "--k", "2", "--strong"]);
        check(code == 0, || format!("{preset}: exit code {code}"))?;
        let samples = cert["samples_checked"].as_u64().unwrap_or(0);
        let violations = cert["violation_count"].as_u64().unwrap_or(u64::MAX);
        check(samples >= 4096 && violations == 0, || {
            format!("{preset}: {samples} samples, {violations} violations")
        })?;
        details.push(format!("{preset} {samples} samples / 0 violations"));
    }
    Ok(details.join(", "))
}

fn signvar_property() -> Outcome {
    let mut r = rng(11);
    for _ in 0..10_000 {
        let n = r.random_range(1..=12);
        let x: Vec<f64> = (0..n)
            .map(|_| if r.random::<f64>() < 0.3 { 0.0 } else { r.random::<f64>() - 0.5 })
            .collect();
        let (lo, hi) = (s_minus(&x), s_plus(&x));
        check(lo <= hi && hi <= n - 1, || format!("{x:?}: s- = {lo}, s+ = {hi}"))?;
    }
    let mut count = 0;
    for code in 0..3usize.pow(8) {
        let x: Vec<f64> = (0..8)
            .map(|i| [0.0, 1.0, -1.0][(code / 3usize.pow(i)) % 3])
            .collect();
        let ex = s_plus_exhaustive(&x, 0.0).map_err(|e| e.to_string())?;
        check(s_plus(&x) == ex, || format!("{x:?}: greedy {} vs {ex}", s_plus(&x)))?;
        count += 1;
    }
    Ok(format!("10^4 random vectors, {count} ternary vectors"))
}

/// Random matrix with the strict 2-cooperative sign pattern (all band and corner cells nonzero).
fn random_two_positive(r: &mut impl Rng, n: usize) -> Mat {
    let p = SignPattern::two_cooperative(n);
    Mat::from_fn(n, n, |i, j| {
        use coop2::coop::Cell;
        match p.get(i, j) {
            Cell::Pos => r.random_range(0.1..1.0),
            Cell::Neg => -r.random_range(0.1..1.0),
            Cell::Zero => 0.0,
            Cell::Any => r.random_range(-2.0..2.0),
        }
    })
}

fn cone_property() -> Outcome {
    let mut r = rng(12);
    let mut worst_residual = 0.0_f64;
    for trial in 0..10 {
        let n = 3 + trial % 4;
        let a = random_two_positive(&mut r, n);
        for s in [0.1, 1.0, 5.0] {
            let e = matrix_exp(&a, s);
            for _ in 0..1000 {
                let z = sample_two_cone(&mut r, n);
                let y = &e * Mat::from_column_slice(n, 1, &z);
                let y: Vec<f64> = y.iter().copied().collect();
                check(s_plus(&y) <= 1, || format!("exp({s} A) maps {z:?} to {y:?}"))?;
            }
        }
        let split = spectral_split(&a).map_err(|e| e.to_string())?;
        let d = &split.diagnostics;
        let res = d.invariance_residual_w1.max(d.invariance_residual_w2);
        worst_residual = worst_residual.max(res);
        check(split.gap > 0.0, || format!("gap {}", split.gap))?;
        // Diagnostics are already relative to |A|.
        check(res <= 1e-8, || format!("invariance residual {res:e} for |A| = {}", norm_inf(&a)))?;
    }
    Ok(format!("10 matrices x 3 times x 10^3 vectors, worst invariance residual {worst_residual:.1e}"))
}

fn absorption_property() -> Outcome {
    let mut details = Vec::new();
    for (label, model) in [("example2", goodwin_example()), ("example3", rna_example())] {
        let e = equilibrium(&model).unwrap().e;
        let region = default_basin_region(&model.bounds, &e);
        let mut r = rng(13);
        let grid: Vec<f64> = (1..=2000).map(|k| k as f64 * 0.05).collect();
        let mut pairs = 0;
        while pairs < 100 {
            let a: Vec<f64> = (0..4)
                .map(|i| r.random_range(region.lower[i]..=region.upper[i]))
                .collect();
            let z = sample_two_cone(&mut r, 4);
            let t = r.random_range(0.01..0.5);
            let w = region.widths();
            let b: Vec<f64> = (0..4).map(|i| a[i] + t * w[i] * z[i]).collect();
            if !model.bounds.contains(&b) || s_minus_of_difference(&a, &b) > 1 || a == b {
                continue;
            }
            let s = monitor_difference(&model, &a, &b, &grid, &OdeOptions::default())
                .map_err(|e| e.to_string())?;
            let max = s.iter().copied().max().unwrap_or(0);
            check(max <= 1, || format!("{label}: s- reached {max} for a = {a:?}, b = {b:?}"))?;
            pairs += 1;
        }
        details.push(format!("{label} 100 pairs"));
    }
    Ok(details.join(", "))
}

fn basin_property() -> Outcome {
    let mut details = Vec::new();
    for (label, model) in [("example2", goodwin_example()), ("example3", rna_example())] {
        let e = equilibrium(&model).unwrap().e;
        let region = default_basin_region(&model.bounds, &e);
        let starts = sample_basin(&e, &region, 50, 14);
        let settings = ClassifySettings::default();
        let mut periodic = 0;
        let mut undetermined = 0;
        for a in &starts {
            let (rep, _) = classify(&model, &e, a, &settings).map_err(|e| e.to_string())?;
            match rep.verdict {
                Verdict::PeriodicOrbit => periodic += 1,
                Verdict::Undetermined => undetermined += 1,
                Verdict::Equilibrium => {
                    return Err(format!("{label}: {a:?} classified as converging to e"));
                }
            }
        }
        check(undetermined * 10 < starts.len(), || {
            format!("{label}: {undetermined} of 50 undetermined")
        })?;
        details.push(format!("{label} {periodic}/50 periodic"));
    }
    Ok(details.join(", "))
}

fn lyapunov_property() -> Outcome {
    let mut details = Vec::new();
    for (label, model) in [("example2", goodwin_example()), ("example3", rna_example())] {
        let e = equilibrium(&model).unwrap().e;
        let split = spectral_split(&model.jacobian(&e).unwrap()).map_err(|e| e.to_string())?;
        let sampling = LyapunovSampling {
            start_region: Some(default_basin_region(&model.bounds, &e)),
            ..Default::default()
        };
        let c = build_certificate(&model, &e, &split, &sampling).map_err(|e| format!("{label}: {e}"))?;
        check(c.alpha > 0.0, || format!("{label}: α = {}", c.alpha))?;
        let tested: usize = c.levels.iter().map(|l| l.tested).sum();
        check(tested == 20_000 && c.levels.iter().all(|l| l.min_vdot > 0.0), || {
            format!("{label}: levels {:?}", c.levels)
        })?;
        let inv = c.invariance.as_ref().ok_or("no invariance check")?;
        check(inv.trajectories == 20 && inv.passed, || format!("{label}: {inv:?}"))?;
        details.push(format!("{label} α = {:.4}, η₀ = {:.2e}", c.alpha, c.eta0.unwrap_or(f64::INFINITY)));
    }
    Ok(details.join(", "))
}

fn main() {
    let mut suite = Suite { failures: 0 };
    let s = Duration::from_secs;
    suite.run("Goodwin example equilibrium", s(1), goodwin_equilibrium_criterion);
    suite.run("Goodwin example spectrum", s(1), goodwin_spectrum_criterion);
    suite.run("RNA example equilibrium", s(1), rna_equilibrium_criterion);
    suite.run("simulate example2 periodic", s(30), || {
        simulate_criterion("example2", goodwin_example(), &[0.1; 4])
    });
    suite.run("simulate example3 periodic", s(30), || {
        simulate_criterion("example3", rna_example(), &[0.0; 4])
    });
    suite.run("certify k=2 strong", s(5), certify_criterion);
    let property_start = Instant::now();
    suite.run("property: sign variations", s(300), signvar_property);
    suite.run("property: cone mapping and split", s(300), cone_property);
    suite.run("property: cone absorption", s(300), absorption_property);
    suite.run("property: basin", s(300), basin_property);
    suite.run("property: Lyapunov certificate", s(300), lyapunov_property);
    let total = property_start.elapsed();
    if total > s(300) {
        suite.failures += 1;
        println!("FAIL  property suite runtime {total:.2?} exceeds 5 min");
    }
    if suite.failures > 0 {
        println!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
