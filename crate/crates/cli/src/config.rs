//! Analysis configuration: TOML schema and validation.
//!
//! Relative paths in the file are resolved against the file's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use apcjust_core::justifiability::MEASUREMENT_LABEL;
use apcjust_core::runner::toy::ToyModel;
use apcjust_core::{
    read_observations, DataSubset, ExternalCommand, ModelKind, ModelSpec, ObservationSet, ParameterSpace, Prior1D,
};

/// Environment variable overriding `cache_dir`.
pub const CACHE_DIR_ENV: &str = "APCJUST_CACHE_DIR";

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "one")]
    pub parallelism: usize,
    pub expansion: ExpansionConfig,
    pub monte_carlo: MonteCarloConfig,
    pub seeds: SeedConfig,
    pub parameters: Vec<ParameterConfig>,
    pub models: Vec<ModelConfig>,
    pub observations: Vec<ObservationConfig>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionConfig {
    pub degree: usize,
    #[serde(default = "ten")]
    pub n_updates: usize,
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub bme: usize,
    pub bapc: usize,
    pub confusion: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub bme: u64,
    pub bapc: u64,
    pub confusion: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterConfig {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default)]
    pub samples_file: Option<PathBuf>,
    #[serde(default)]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    pub kind: String,
    pub parameters: Vec<String>,
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default)]
    pub timeout_seconds: Option<f64>,
    #[serde(default)]
    pub prior_probability: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub quantity: String,
    pub file: PathBuf,
    pub subset_sizes: Vec<usize>,
}

/// Data subsets of one quantity, in configured order.
#[derive(Debug, Clone)]
pub struct QuantitySweep {
    pub quantity: String,
    pub subsets: Vec<DataSubset>,
}

/// A configuration that passed validation, with everything resolved.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: AnalysisConfig,
    pub config_sha256: String,
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub space: ParameterSpace,
    pub models: Vec<ModelSpec>,
    pub model_priors: Option<Vec<f64>>,
    pub observations: ObservationSet,
    pub sweeps: Vec<QuantitySweep>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_samples(path: &Path) -> Result<Vec<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| format!("{} line {}: '{}' is not a number", path.display(), i + 1, l.trim()))
        })
        .collect()
}

/// Reads, parses and validates a configuration file. Every problem found is
/// reported; no model is executed.
pub fn load(path: &Path) -> Result<Analysis, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError::Syntax {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let config: AnalysisConfig = toml::from_str(&text).map_err(|e| ConfigError::Syntax {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let sha = hex::encode(Sha256::digest(&bytes));
    validate(config, &base, sha)
}

pub fn validate(config: AnalysisConfig, base: &Path, config_sha256: String) -> Result<Analysis, ConfigError> {
    let mut errors = Vec::new();

    if config.expansion.degree < 1 {
        errors.push("expansion.degree must be at least 1".to_string());
    }
    if config.parallelism < 1 {
        errors.push("parallelism must be at least 1".to_string());
    }
    if config.monte_carlo.bme < apcjust_core::bayes::MIN_MC_SAMPLES {
        errors.push(format!(
            "monte_carlo.bme must be at least {}",
            apcjust_core::bayes::MIN_MC_SAMPLES
        ));
    }
    if config.monte_carlo.bapc < 1 {
        errors.push("monte_carlo.bapc must be at least 1".to_string());
    }
    if config.monte_carlo.confusion < 2 {
        errors.push("monte_carlo.confusion must be at least 2".to_string());
    }

    // parameters
    let degree = config.expansion.degree.max(1);
    let mut priors = Vec::new();
    let mut names = HashSet::new();
    if config.parameters.is_empty() {
        errors.push("parameters: at least one parameter is required".to_string());
    }
    for (i, p) in config.parameters.iter().enumerate() {
        let field = format!("parameters[{i}] ({})", p.name);
        if p.name.is_empty() {
            errors.push(format!("parameters[{i}].name is empty"));
        }
        if !names.insert(p.name.clone()) {
            errors.push(format!("{field}: duplicate parameter name"));
        }
        let prior = match p.kind.as_str() {
            "uniform" => match (p.lower, p.upper) {
                (Some(lo), Some(hi)) => Prior1D::uniform(lo, hi).map_err(|e| format!("{field}: {e}")),
                _ => Err(format!("{field}: uniform prior needs lower and upper")),
            },
            "samples" => match &p.samples_file {
                None => Err(format!("{field}: sample-set prior needs samples_file")),
                Some(f) => read_samples(&resolve(base, f))
                    .map_err(|e| format!("{field}.samples_file: {e}"))
                    .and_then(|s| {
                        let needed = 2 * (degree + 1) + 2;
                        if s.len() < needed {
                            Err(format!(
                                "{field}: {} samples given, degree {degree} needs at least {needed}",
                                s.len()
                            ))
                        } else {
                            Prior1D::from_samples(s).map_err(|e| format!("{field}: {e}"))
                        }
                    }),
            },
            other => Err(format!("{field}.kind: unknown prior kind '{other}' (uniform, samples)")),
        };
        match prior {
            Ok(pr) => {
                let pr = match &p.unit {
                    Some(u) => pr.with_unit(u.clone()),
                    None => pr,
                };
                priors.push((p.name.clone(), pr));
            }
            Err(e) => errors.push(e),
        }
    }
    let space = if priors.len() == config.parameters.len() && !priors.is_empty() {
        match ParameterSpace::new(priors) {
            Ok(s) => Some(s),
            Err(e) => {
                errors.push(format!("parameters: {e}"));
                None
            }
        }
    } else {
        None
    };

    // observations
    let mut obs_sets = Vec::new();
    let mut quantities = HashSet::new();
    if config.observations.is_empty() {
        errors.push("observations: at least one observation file is required".to_string());
    }
    for (i, o) in config.observations.iter().enumerate() {
        let field = format!("observations[{i}] ({})", o.quantity);
        if !quantities.insert(o.quantity.clone()) {
            errors.push(format!("{field}: quantity listed twice"));
        }
        let path = resolve(base, &o.file);
        match read_observations(&path) {
            Ok(set) => {
                let foreign: Vec<String> = set
                    .grid()
                    .quantities()
                    .into_iter()
                    .filter(|q| *q != o.quantity)
                    .collect();
                if !foreign.is_empty() {
                    errors.push(format!(
                        "{field}.file: contains quantities {foreign:?}, expected only '{}'",
                        o.quantity
                    ));
                    continue;
                }
                let available = set.grid().spatial_labels(&o.quantity).len();
                if o.subset_sizes.is_empty() {
                    errors.push(format!("{field}.subset_sizes is empty"));
                }
                for &n in &o.subset_sizes {
                    if n == 0 || n > available {
                        errors.push(format!(
                            "{field}.subset_sizes: {n} spatial points requested, {available} available"
                        ));
                    }
                }
                obs_sets.push(set);
            }
            Err(e) => errors.push(format!("{field}.file: {e}")),
        }
    }
    let observations = if obs_sets.len() == config.observations.len() && !obs_sets.is_empty() {
        match ObservationSet::merge(&obs_sets) {
            Ok(o) => Some(o),
            Err(e) => {
                errors.push(format!("observations: {e}"));
                None
            }
        }
    } else {
        None
    };

    // models
    let mut ids = HashSet::new();
    let mut models = Vec::new();
    if config.models.is_empty() {
        errors.push("models: at least one model is required".to_string());
    }
    let given_priors: Vec<Option<f64>> = config.models.iter().map(|m| m.prior_probability).collect();
    let model_priors = if given_priors.iter().all(Option::is_none) {
        None
    } else if given_priors.iter().all(Option::is_some) {
        let p: Vec<f64> = given_priors.iter().map(|v| v.unwrap_or_default()).collect();
        if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            errors.push("models[*].prior_probability must be positive".to_string());
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            errors.push(format!("models[*].prior_probability sums to {total}, not 1"));
        }
        Some(p)
    } else {
        errors.push("models[*].prior_probability must be given for every model or for none".to_string());
        None
    };
    for (i, m) in config.models.iter().enumerate() {
        let field = format!("models[{i}] ({})", m.id);
        if m.id.is_empty() {
            errors.push(format!("models[{i}].id is empty"));
        }
        if m.id == MEASUREMENT_LABEL {
            errors.push(format!(
                "{field}.id: '{MEASUREMENT_LABEL}' is reserved for the measurement data"
            ));
        }
        if !ids.insert(m.id.clone()) {
            errors.push(format!("{field}.id: duplicate model id"));
        }
        if let Some(space) = &space {
            for p in &m.parameters {
                if space.index_of(p).is_none() {
                    errors.push(format!("{field}.parameters: unknown parameter '{p}'"));
                }
            }
        }
        let kind = match m.kind.as_str() {
            "toy-fc" => Some(ModelKind::Toy(ToyModel::FullComplexity)),
            "toy-ib" => Some(ModelKind::Toy(ToyModel::InitialBiofilm)),
            "toy-sc" => Some(ModelKind::Toy(ToyModel::SimpleChemistry)),
            "external" => {
                let mut ok = true;
                let command = m.command.clone().unwrap_or_default();
                if command.trim().is_empty() {
                    errors.push(format!("{field}.command: external models need a command"));
                    ok = false;
                }
                let timeout = m.timeout_seconds.unwrap_or(3600.0);
                if !(timeout.is_finite() && timeout > 0.0) {
                    errors.push(format!("{field}.timeout_seconds must be positive"));
                    ok = false;
                }
                let mut cmd = ExternalCommand::new(command, timeout);
                if let Some(w) = &m.workdir {
                    let dir = resolve(base, w);
                    if !dir.is_dir() {
                        errors.push(format!("{field}.workdir: {} is not a directory", dir.display()));
                        ok = false;
                    }
                    cmd = cmd.with_workdir(dir);
                }
                ok.then_some(ModelKind::External(cmd))
            }
            other => {
                errors.push(format!(
                    "{field}.kind: unknown model kind '{other}' (toy-fc, toy-ib, toy-sc, external)"
                ));
                None
            }
        };
        if let (Some(kind), Some(space), Some(obs)) = (kind, &space, &observations) {
            if m.parameters.iter().all(|p| space.index_of(p).is_some()) {
                match ModelSpec::new(m.id.clone(), kind, m.parameters.clone(), space, obs.grid().clone()) {
                    Ok(spec) => models.push(spec),
                    Err(e) => errors.push(format!("{field}: {e}")),
                }
            }
        }
    }

    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    let space = space.expect("validated");
    let observations = observations.expect("validated");
    let sweeps = config
        .observations
        .iter()
        .map(|o| QuantitySweep {
            quantity: o.quantity.clone(),
            subsets: o
                .subset_sizes
                .iter()
                .map(|&n| DataSubset::new(observations.grid(), &o.quantity, n).expect("validated"))
                .collect(),
        })
        .collect();
    let output_dir = resolve(base, &config.output_dir);
    let cache_dir = match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => match &config.cache_dir {
            Some(d) => resolve(base, d),
            None => output_dir.join("cache"),
        },
    };
    Ok(Analysis {
        config,
        config_sha256,
        output_dir,
        cache_dir,
        space,
        models,
        model_priors,
        observations,
        sweeps,
    })
}
