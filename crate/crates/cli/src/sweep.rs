//! Parameter grids over at most two parameters.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;

use coop2::models::equilibrium;
use coop2::ode::format_sci;
use coop2::orbit::{classify, default_basin_region, sample_basin, Verdict};

use crate::model_args::{ModelArgs, ModelSpec};
use crate::{write_output, CliError, SolverArgs};

const MAX_POINTS: usize = 100_000;

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `name=start:stop:step` (inclusive) or `name=v1,v2,...`; at most two.
    #[arg(long = "grid", required = true)]
    grids: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

pub fn parse_axis(s: &str) -> Result<Axis, String> {
    let (name, rest) = s
        .split_once('=')
        .ok_or_else(|| format!("grid `{s}` must look like name=start:stop:step or name=v1,v2"))?;
    let num = |t: &str| -> Result<f64, String> {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{t}` is not a finite number"))
    };
    let values = if rest.contains(':') {
        let parts: Vec<&str> = rest.split(':').collect();
        let [a, b, h] = parts[..] else {
            return Err(format!("range `{rest}` needs start:stop:step"));
        };
        let (a, b, h) = (num(a)?, num(b)?, num(h)?);
        if !(h > 0.0) || b < a {
            return Err(format!("range `{rest}` needs step > 0 and stop >= start"));
        }
        let count = ((b - a) / h + 1e-9).floor() as usize + 1;
        if count > MAX_POINTS {
            return Err(format!("range `{rest}` has too many points"));
        }
        (0..count).map(|i| a + i as f64 * h).collect()
    } else {
        rest.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() {
        return Err(format!("grid `{s}` is empty"));
    }
    Ok(Axis {
        name: name.trim().to_string(),
        values,
    })
}

/// Grid points in row-major order (the last axis varies fastest).
pub fn grid_points(axes: &[Axis]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

struct Row {
    unstable: Option<usize>,
    verdict: Option<Verdict>,
    period: Option<f64>,
    error: Option<String>,
}

fn run_point(
    base: &ModelSpec,
    axes: &[Axis],
    values: &[f64],
    solver: &SolverArgs,
    seed: u64,
) -> Row {
    let mut row = Row {
        unstable: None,
        verdict: None,
        period: None,
        error: None,
    };
    let mut spec = base.clone();
    for (axis, &v) in axes.iter().zip(values) {
        if let Err(e) = spec.set(&axis.name, v) {
            row.error = Some(e);
            return row;
        }
    }
    let outcome = (|| -> Result<(), String> {
        let model = spec.build().map_err(|e| e.to_string())?;
        let eq = equilibrium(&model).map_err(|e| e.to_string())?;
        row.unstable = Some(eq.unstable_count);
        let settings = solver.settings(model.dim()).map_err(|e| format!("{e:?}"))?;
        let region = default_basin_region(&model.bounds, &eq.e);
        let a = sample_basin(&eq.e, &region, 1, seed).remove(0);
        let (report, _) = classify(&model, &eq.e, &a, &settings).map_err(|e| e.to_string())?;
        row.verdict = Some(report.verdict);
        row.period = report.period.filter(|_| report.verdict == Verdict::PeriodicOrbit);
        Ok(())
    })();
    row.error = outcome.err();
    row
}

pub fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let resolved = args.model.resolve()?;
    if args.grids.len() > 2 {
        return Err(CliError::Usage("at most two --grid axes".into()));
    }
    let axes: Vec<Axis> = args
        .grids
        .iter()
        .map(|g| parse_axis(g))
        .collect::<Result<_, _>>()
        .map_err(CliError::Usage)?;
    let points = grid_points(&axes);
    if points.len() > MAX_POINTS {
        return Err(CliError::Usage(format!("grid has {} points, limit {MAX_POINTS}", points.len())));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    let seed = resolved.seed;
    let rows: Vec<Row> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| run_point(&resolved.spec, &axes, p, &args.solver, seed.wrapping_add(i as u64)))
            .collect()
    });

    let mut csv = String::new();
    for axis in &axes {
        csv.push_str(&axis.name);
        csv.push(',');
    }
    csv.push_str("unstable_count,verdict,period,error\n");
    for (p, row) in points.iter().zip(&rows) {
        for v in p {
            let _ = write!(csv, "{v},");
        }
        let verdict = row.verdict.map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            row.unstable.map(|u| u.to_string()).unwrap_or_default(),
            verdict,
            row.period.map(format_sci).unwrap_or_default(),
            row.error.as_deref().unwrap_or("").replace([',', '\n', '"'], ";"),
        );
    }
    write_output(args.out.as_deref(), &csv)
}
