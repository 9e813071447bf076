//! Turning command-line model flags into a [`Model`].

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use coop2::modeldsl::ModelConfig;
use coop2::models::{from_config, goodwin, rna_oscillator, Model, ModelError, RnaParams};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelName {
    Goodwin,
    Rna,
    Dsl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Goodwin, n = 4, α_i = 1/2, m = 10, started at [0.1; 4].
    Example2,
    /// RNA oscillator with its reference rates, started at 0.
    Example3,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelName>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Goodwin dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Goodwin decay rates; a single value is repeated n times.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Goodwin Hill exponent.
    #[arg(long)]
    pub m: Option<u32>,
    /// Parameter override `name=value` (RNA rates, DSL parameters, Goodwin `alpha`/`alphaI`/`m`).
    #[arg(long = "param", value_parser = parse_kv)]
    pub params: Vec<(String, f64)>,
    /// JSON model config for `--model dsl`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sampling seed; COOP2_SEED takes precedence.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn parse_kv(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

/// Model description that can still be edited by sweeps.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Goodwin { alpha: Vec<f64>, m: u32 },
    Rna(RnaParams),
    Dsl(ModelConfig),
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model, ModelError> {
        match self {
            ModelSpec::Goodwin { alpha, m } => goodwin(alpha.len(), alpha.clone(), *m),
            ModelSpec::Rna(p) => rna_oscillator(*p),
            ModelSpec::Dsl(cfg) => from_config(cfg),
        }
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), String> {
        match self {
            ModelSpec::Goodwin { alpha, m } => {
                if name == "alpha" {
                    alpha.iter_mut().for_each(|a| *a = value);
                } else if name == "m" {
                    if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                        return Err(format!("m must be a positive integer, got {value}"));
                    }
                    *m = value as u32;
                } else if name == "n" {
                    if value < 1.0 || value.fract() != 0.0 || value > 64.0 {
                        return Err(format!("n must be an integer in 1..=64, got {value}"));
                    }
                    let a0 = alpha[0];
                    alpha.resize(value as usize, a0);
                } else if let Some(i) = name.strip_prefix("alpha").and_then(|s| s.parse::<usize>().ok()) {
                    if i == 0 || i > alpha.len() {
                        return Err(format!("`{name}` is out of range for n = {}", alpha.len()));
                    }
                    alpha[i - 1] = value;
                } else {
                    return Err(format!("unknown Goodwin parameter `{name}`"));
                }
            }
            ModelSpec::Rna(p) => {
                let kv = BTreeMap::from([(name.to_string(), value)]);
                *p = p.with_overrides(&kv).map_err(|e| e.to_string())?;
            }
            ModelSpec::Dsl(cfg) => {
                if !cfg.params.contains_key(name) {
                    return Err(format!("unknown parameter `{name}` in config `{}`", cfg.name));
                }
                cfg.params.insert(name.to_string(), value);
            }
        }
        Ok(())
    }
}

pub struct Resolved {
    pub spec: ModelSpec,
    /// Initial state attached to a preset.
    pub preset_a: Option<Vec<f64>>,
    pub seed: u64,
}

pub fn effective_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var("COOP2_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("COOP2_SEED=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let usage = |m: String| CliError::Usage(m);
        let seed = effective_seed(self.seed)?;
        let name = match (self.model, self.preset) {
            (Some(m), None) => m,
            (None, Some(Preset::Example2)) => ModelName::Goodwin,
            (None, Some(Preset::Example3)) => ModelName::Rna,
            (Some(m), Some(p)) => {
                let expected = if p == Preset::Example2 {
                    ModelName::Goodwin
                } else {
                    ModelName::Rna
                };
                if m != expected {
                    return Err(usage(format!("preset {p:?} does not apply to model {m:?}")));
                }
                m
            }
            (None, None) if self.config.is_some() => ModelName::Dsl,
            (None, None) => return Err(usage("one of --model, --preset or --config is required".into())),
        };
        let (mut spec, preset_a) = match name {
            ModelName::Goodwin => {
                let from_preset = self.preset == Some(Preset::Example2);
                let n = match (self.n, &self.alpha) {
                    (Some(n), _) => n,
                    (None, Some(a)) if a.len() > 1 => a.len(),
                    _ if from_preset => 4,
                    _ => return Err(usage("Goodwin needs --n (or a full --alpha list)".into())),
                };
                if n == 0 {
                    return Err(usage("--n must be positive".into()));
                }
                let alpha = match &self.alpha {
                    Some(a) if a.len() == 1 => vec![a[0]; n],
                    Some(a) if a.len() == n => a.clone(),
                    Some(a) => {
                        return Err(usage(format!("--alpha has {} entries, n = {n}", a.len())));
                    }
                    None if from_preset => vec![0.5; n],
                    None => return Err(usage("Goodwin needs --alpha".into())),
                };
                let m = match self.m {
                    Some(m) => m,
                    None if from_preset => 10,
                    None => return Err(usage("Goodwin needs --m".into())),
                };
                let a = from_preset.then(|| vec![0.1; n]);
                (ModelSpec::Goodwin { alpha, m }, a)
            }
            ModelName::Rna => {
                let a = (self.preset == Some(Preset::Example3)).then(|| vec![0.0; 4]);
                (ModelSpec::Rna(RnaParams::example3()), a)
            }
            ModelName::Dsl => {
                let path = self
                    .config
                    .as_ref()
                    .ok_or_else(|| usage("--model dsl needs --config".into()))?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
                let cfg = ModelConfig::from_json(&text).map_err(|e| usage(e.to_string()))?;
                (ModelSpec::Dsl(cfg), None)
            }
        };
        for (k, v) in &self.params {
            spec.set(k, *v).map_err(usage)?;
        }
        Ok(Resolved { spec, preset_a, seed })
    }
}
