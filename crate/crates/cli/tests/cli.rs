use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn coop2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coop2"))
        .args(args)
        .env_remove("COOP2_SEED")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&o.stderr))
    })
}

fn assert_schema(name: &str, value: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

const QUICK_LYAPUNOV: &[&str] = &[
    "--cone-samples",
    "5000",
    "--remainder-samples",
    "5000",
    "--level-samples",
    "500",
    "--trajectories",
    "3",
];

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"], &["simulate", "--help"]] {
        let o = coop2(args);
        assert_eq!(code(&o), 0, "{args:?}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &[][..],
        &["frobnicate"],
        &["certify", "--preset", "example9"],
        &["certify", "--preset", "example2", "--k", "3"],
        &["simulate", "--preset", "example2", "--a", "0.1,0.1"],
        &["simulate", "--model", "goodwin", "--n", "4", "--alpha", "0.5,0.5", "--m", "10"],
        &["sweep", "--preset", "example2", "--grid", "m=1:2:0"],
        &["spectral", "--matrix", "/nonexistent/matrix.json"],
    ] {
        assert_eq!(code(&coop2(args)), 1, "{args:?}");
    }
}

#[test]
fn non_square_matrix_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    std::fs::write(&p, "[[1, 2], [3]]").unwrap();
    assert_eq!(code(&coop2(&["spectral", "--matrix", p.to_str().unwrap()])), 1);
}

#[test]
fn bad_seed_in_environment_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_coop2"))
        .args(["certify", "--preset", "example2", "--samples", "16"])
        .env("COOP2_SEED", "twelve")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn negative_feedback_is_not_cooperative() {
    // The Goodwin corner entry is negative, so the k = 1 pattern fails.
    let o = coop2(&["certify", "--preset", "example2", "--k", "1", "--samples", "64"]);
    assert_eq!(code(&o), 2);
    let v = json(&o);
    assert_eq!(v["passed"], false);
    assert!(v["violation_count"].as_u64().unwrap() > 0);
    assert_schema("certificate", &v);
}

#[test]
fn certify_presets_pass_and_match_schema() {
    for preset in ["example2", "example3"] {
        let o = coop2(&["certify", "--preset", preset, "--strong", "--samples", "256"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v = json(&o);
        assert_eq!(v["passed"], true);
        assert_eq!(v["k"], 2);
        assert_schema("certificate", &v);
    }
}

#[test]
fn analyze_and_spectral_match_schema() {
    for preset in ["example2", "example3"] {
        let o = coop2(&["analyze", "--preset", preset, "--samples", "256"]);
        assert_eq!(code(&o), 0);
        let v = json(&o);
        assert_eq!(v["oscillation"]["all_passed"], true);
        assert_eq!(v["equilibrium"]["unstable_count"], 2);
        assert_schema("analyze", &v);

        let o = coop2(&["spectral", "--preset", preset]);
        assert_eq!(code(&o), 0);
        assert_schema("spectral", &json(&o));
    }
}

#[test]
fn spectral_accepts_a_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    std::fs::write(&p, "[[1, 0, 0], [0, 2, 0], [0, 0, -3]]").unwrap();
    let o = coop2(&["spectral", "--matrix", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_schema("spectral", &v);
    assert!(v["equilibrium"].is_null());
    let eig = v["split"]["spectrum"]["eigenvalues"].as_array().unwrap();
    let re: Vec<f64> = eig.iter().map(|z| z[0].as_f64().unwrap()).collect();
    assert_eq!(re, vec![2.0, 1.0, -3.0]);
}

#[test]
fn simulate_reports_orbit_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let o = coop2(&["simulate", "--preset", "example2", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_eq!(v["verdict"], "PeriodicOrbit");
    assert_schema("orbit", &v);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,x3,x4,s_minus"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    assert_eq!(row[0], "0.000000000000e+00");
}

#[test]
fn simulate_from_the_equilibrium_stays_there() {
    let e = json(&coop2(&["spectral", "--preset", "example2"]))["equilibrium"].clone();
    let a: Vec<String> = e.as_array().unwrap().iter().map(|x| format!("{}", x.as_f64().unwrap())).collect();
    let o = coop2(&["simulate", "--preset", "example2", "--a", &a.join(",")]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert_eq!(v["verdict"], "Equilibrium");
    assert_schema("orbit", &v);
}

#[test]
fn short_horizon_is_an_analysis_failure() {
    let o = coop2(&["simulate", "--preset", "example2", "--horizon", "20"]);
    assert_eq!(code(&o), 2);
    assert_eq!(json(&o)["verdict"], "Undetermined");
}

#[test]
fn lyapunov_matches_schema() {
    let mut args = vec!["lyapunov", "--preset", "example2"];
    args.extend_from_slice(QUICK_LYAPUNOV);
    let o = coop2(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["label"], "sampled, not proved");
    assert_schema("lyapunov", &v);
}

#[test]
fn runs_are_byte_identical() {
    let mut lyap = vec!["lyapunov", "--preset", "example3", "--seed", "5"];
    lyap.extend_from_slice(QUICK_LYAPUNOV);
    for args in [
        &["certify", "--preset", "example3", "--samples", "200", "--seed", "5"][..],
        &lyap,
        &["sweep", "--preset", "example2", "--grid", "m=8:10:1", "--horizon", "200"],
    ] {
        let a = coop2(args);
        let b = coop2(args);
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn environment_seed_overrides_flag() {
    let args = ["certify", "--preset", "example3", "--samples", "200", "--seed", "5"];
    let o = Command::new(env!("CARGO_BIN_EXE_coop2")).args(args).env("COOP2_SEED", "17").output().unwrap();
    assert_eq!(code(&o), 0);
    let with_env = json(&o);
    assert_eq!(with_env["seed"], 17);
    let direct = json(&coop2(&["certify", "--preset", "example3", "--samples", "200", "--seed", "17"]));
    assert_eq!(with_env, direct);
}

#[test]
fn sweep_csv_layout() {
    let o = coop2(&["sweep", "--preset", "example2", "--grid", "m=9,10", "--jobs", "2"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m,unstable_count,verdict,period,error");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 5);
        assert_eq!(f[1], "2");
        assert_eq!(f[2], "PeriodicOrbit");
    }
}

#[test]
fn dsl_config_runs_and_bad_config_is_usage() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(
        &good,
        r#"{"name":"g3","dim":3,"params":{"a":0.5},
            "field":["1/(1+x3^2) - a*x1","x1 - a*x2","x2 - a*x3"],
            "box":{"lower":[0,0,0],"upper":[2,4,8]}}"#,
    )
    .unwrap();
    let o = coop2(&["certify", "--model", "dsl", "--config", good.to_str().unwrap(), "--samples", "128"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["model"], "g3");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name":"b","dim":1,"field":["x1 +"],"box":{"lower":[0],"upper":[1]}}"#).unwrap();
    let o = coop2(&["certify", "--model", "dsl", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
