//! `coop2`: certification, spectral analysis and simulation from the command line.
//!
//! Exit codes: 0 pass, 1 usage, 2 analysis fail, 3 solver failure, 4 integration failure.

mod model_args;
mod sweep;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use coop2::coop::{certify, CertifyOptions, CoopCertificate, CoopError, DEFAULT_SAMPLES};
use coop2::linalg::{from_rows, to_rows};
use coop2::lyapunov::{build_certificate, LyapunovError, LyapunovSampling};
use coop2::models::{equilibrium, Equilibrium, Model, ModelError};
use coop2::ode::OdeOptions;
use coop2::orbit::{classify, default_basin_region, oscillation_check, ClassifySettings, OscillationReport, Verdict};
use coop2::spectral::{characteristic_polynomial, spectral_split, SpectralSplit};

use model_args::{ModelArgs, Resolved};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Analysis(String),
    Solver(String),
    Integration(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Analysis(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Integration(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Analysis(m) | CliError::Solver(m) | CliError::Integration(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadParams(_) | ModelError::Config(_) | ModelError::DimensionMismatch { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Solver(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "coop2", version, about = "Strong 2-cooperativity certificates and oscillation analysis for ODE models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sampled k-cooperativity certificate over the model box.
    Certify(CertifyArgs),
    /// Equilibrium, spectrum and the hypotheses for convergence to a periodic orbit.
    Analyze(AnalyzeArgs),
    /// Integrate one trajectory, write CSV and classify its tail.
    Simulate(SimulateArgs),
    /// Parameter grid with one basin sample per point.
    Sweep(sweep::SweepArgs),
    /// W1 ⊕ W2 splitting of the Jacobian at the equilibrium.
    Spectral(SpectralArgs),
    /// Sampled Lyapunov certificate near the equilibrium.
    Lyapunov(LyapunovArgs),
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    k: u8,
    /// Also require an irreducible Jacobian at interior samples.
    #[arg(long)]
    strong: bool,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// JSON output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Samples for the cooperativity hypothesis.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 400.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub rtol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub atol: f64,
    /// Section coordinate, 1-based (default: the last one).
    #[arg(long)]
    pub section: Option<usize>,
}

impl SolverArgs {
    pub fn settings(&self, n: usize) -> Result<ClassifySettings, CliError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(CliError::Usage("--horizon must be positive".into()));
        }
        let section_coord = match self.section {
            Some(c) if c == 0 || c > n => {
                return Err(CliError::Usage(format!("--section must be in 1..={n}")));
            }
            Some(c) => Some(c - 1),
            None => None,
        };
        Ok(ClassifySettings {
            horizon: self.horizon,
            section_coord,
            ode: OdeOptions::with_tolerances(self.rtol, self.atol),
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Initial state, comma separated (defaults to the preset's).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    a: Option<Vec<f64>>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Trajectory CSV path (`t,x1,...,xn,s_minus`).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Report JSON path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectralArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Split this matrix (JSON rows) instead of a model Jacobian.
    #[arg(long, conflicts_with_all = ["model", "preset", "config"])]
    matrix: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LyapunovArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100_000)]
    cone_samples: usize,
    #[arg(long, default_value_t = 100_000)]
    remainder_samples: usize,
    #[arg(long, default_value_t = 10_000)]
    level_samples: usize,
    #[arg(long, default_value_t = 20)]
    trajectories: usize,
    #[arg(long, default_value_t = 100.0)]
    trajectory_horizon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Certify(a) => cmd_certify(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::Spectral(a) => cmd_spectral(a),
        Command::Lyapunov(a) => cmd_lyapunov(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coop2: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Usage(format!("stdout: {e}")))
        }
    }
}

fn emit<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_output(path, &text)
}

fn build(resolved: &Resolved) -> Result<Model, CliError> {
    Ok(resolved.spec.build()?)
}

fn cmd_certify(args: CertifyArgs) -> Result<(), CliError> {
    let resolved = args.model.resolve()?;
    let model = build(&resolved)?;
    let opts = CertifyOptions {
        k: args.k as usize,
        strong: args.strong,
        samples: args.samples,
        seed: resolved.seed,
        ..Default::default()
    };
    let cert: CoopCertificate = certify(&model, &opts).map_err(|e| match e {
        CoopError::BadK(_) => CliError::Usage(e.to_string()),
        other => CliError::Solver(other.to_string()),
    })?;
    emit(args.out.as_deref(), &cert)?;
    if cert.passed {
        Ok(())
    } else {
        Err(CliError::Analysis(format!(
            "{} of {} samples violate the k = {} pattern",
            cert.violation_count, cert.samples_checked, cert.k
        )))
    }
}

#[derive(Serialize)]
struct AnalyzeReport {
    model: String,
    params: std::collections::BTreeMap<String, f64>,
    equilibrium: Equilibrium,
    /// `[1, c1, ..., cn]` of `det(sI - J(e))`.
    characteristic_polynomial: Vec<f64>,
    split: Option<SpectralSplit>,
    split_error: Option<String>,
    oscillation: OscillationReport,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let resolved = args.model.resolve()?;
    let model = build(&resolved)?;
    let eq = equilibrium(&model)?;
    let j = model.jacobian(&eq.e)?;
    let (split, split_error) = match spectral_split(&j) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let opts = CertifyOptions {
        samples: args.samples,
        seed: resolved.seed,
        ..Default::default()
    };
    let oscillation = oscillation_check(&model, &opts).map_err(|e| CliError::Solver(e.to_string()))?;
    for h in &oscillation.hypotheses {
        eprintln!("{:<30} {:<5} {}", h.name, if h.passed { "ok" } else { "FAIL" }, h.detail);
    }
    let passed = oscillation.all_passed;
    let report = AnalyzeReport {
        model: model.name.clone(),
        params: model.params.clone(),
        characteristic_polynomial: characteristic_polynomial(&j),
        equilibrium: eq,
        split,
        split_error,
        oscillation,
    };
    emit(args.out.as_deref(), &report)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Analysis("oscillation hypotheses not all satisfied".into()))
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let resolved = args.model.resolve()?;
    let model = build(&resolved)?;
    let a = args
        .a
        .clone()
        .or(resolved.preset_a.clone())
        .ok_or_else(|| CliError::Usage("--a is required without a preset".into()))?;
    if a.len() != model.dim() {
        return Err(CliError::Usage(format!("--a has {} entries, model dimension is {}", a.len(), model.dim())));
    }
    let settings = args.solver.settings(model.dim())?;
    let eq = equilibrium(&model)?;
    let (report, traj) = classify(&model, &eq.e, &a, &settings).map_err(|e| CliError::Integration(e.to_string()))?;
    if let Some(path) = &args.csv {
        let file = fs::File::create(path).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        traj.write_csv(io::BufWriter::new(file))
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    emit(args.out.as_deref(), &report)?;
    match report.verdict {
        Verdict::Undetermined => Err(CliError::Analysis("trajectory tail is undetermined".into())),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct SpectralReport {
    equilibrium: Option<Vec<f64>>,
    matrix: Vec<Vec<f64>>,
    characteristic_polynomial: Vec<f64>,
    split: SpectralSplit,
}

fn cmd_spectral(args: SpectralArgs) -> Result<(), CliError> {
    let (a, e) = match &args.matrix {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
                return Err(CliError::Usage("matrix must be square and non-empty".into()));
            }
            (from_rows(&rows), None)
        }
        None => {
            let resolved = args.model.resolve()?;
            let model = build(&resolved)?;
            let eq = equilibrium(&model)?;
            (model.jacobian(&eq.e)?, Some(eq.e))
        }
    };
    let split = spectral_split(&a).map_err(|e| CliError::Solver(e.to_string()))?;
    let report = SpectralReport {
        equilibrium: e,
        characteristic_polynomial: characteristic_polynomial(&a),
        matrix: to_rows(&a),
        split,
    };
    emit(args.out.as_deref(), &report)
}

fn cmd_lyapunov(args: LyapunovArgs) -> Result<(), CliError> {
    let resolved = args.model.resolve()?;
    let model = build(&resolved)?;
    let eq = equilibrium(&model)?;
    let split = spectral_split(&model.jacobian(&eq.e)?).map_err(|e| CliError::Solver(e.to_string()))?;
    let sampling = LyapunovSampling {
        cone_samples: args.cone_samples,
        remainder_samples: args.remainder_samples,
        level_samples: args.level_samples,
        trajectories: args.trajectories,
        trajectory_horizon: args.trajectory_horizon,
        seed: resolved.seed,
        start_region: Some(default_basin_region(&model.bounds, &eq.e)),
    };
    let cert = build_certificate(&model, &eq.e, &split, &sampling).map_err(|e| match e {
        LyapunovError::Ode(_) => CliError::Integration(e.to_string()),
        LyapunovError::SeparationFailure { .. }
        | LyapunovError::NotPositiveDefinite { .. }
        | LyapunovError::NotUnstable => CliError::Analysis(e.to_string()),
        _ => CliError::Solver(e.to_string()),
    })?;
    emit(args.out.as_deref(), &cert)?;
    if cert.passed {
        Ok(())
    } else {
        Err(CliError::Analysis("sampled Lyapunov checks failed".into()))
    }
}
