//! Stage orchestration and artifact layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use apcjust_core::bayes::{measurement_covariance, weight_sm, BmeReport};
use apcjust_core::justifiability::ConfusionMatrix;
use apcjust_core::stats::derive_seed;
use apcjust_core::{
    approximation_covariance, bapc_update, bme_monte_carlo, confusion_matrix, initial_surrogate, loocv_error,
    rmse_table, BapcSettings, CandidateModel, ConfusionSettings, DataSubset, EvaluationCache, LoocvReport, RmseTable,
    Runner, Surrogate, UpdateTrace,
};

use crate::config::{self, Analysis, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Surrogate,
    Bms,
    Justify,
    All,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] apcjust_core::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Artifact(String),
}

impl PipelineError {
    /// 1 for unusable input, 2 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// A built and updated surrogate with its final LOOCV error.
#[derive(Debug, Clone)]
pub struct ModelResult {
    pub id: String,
    pub surrogate: Surrogate,
    pub loocv: LoocvReport,
    pub trace: UpdateTrace,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub fresh_executions: usize,
    pub models: Vec<ModelResult>,
    pub bme_reports: Vec<(String, BmeReport)>,
    pub confusion: Vec<(String, ConfusionMatrix)>,
    pub rmse: Option<RmseTable>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    config_sha256: String,
    seeds: config::SeedConfig,
    degree: usize,
    n_updates: usize,
    monte_carlo: config::MonteCarloConfig,
    parallelism: usize,
    parameters: Vec<String>,
    models: Vec<String>,
    subsets: Vec<String>,
    stages: Vec<String>,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| PipelineError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> apcjust_core::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(path, &buf)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(apcjust_core::Error::from)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn runner_for(analysis: &Analysis) -> Result<Runner> {
    let cache = EvaluationCache::open(&analysis.cache_dir)?;
    Ok(Runner::new(analysis.config.parallelism)?.with_cache(cache))
}

/// Builds every model's initial surrogate and runs the BaPC updates.
pub fn build_surrogates(analysis: &Analysis, runner: &Runner, warnings: &mut Vec<String>) -> Result<Vec<ModelResult>> {
    let degree = analysis.config.expansion.degree;
    let mut results = Vec::with_capacity(analysis.models.len());
    for (i, model) in analysis.models.iter().enumerate() {
        let initial = initial_surrogate(model, runner, &analysis.space, degree)?;
        let settings = BapcSettings {
            n_updates: analysis.config.expansion.n_updates,
            n_mc: analysis.config.monte_carlo.bapc,
            seed: derive_seed(analysis.config.seeds.bapc, i as u64),
        };
        let (surrogate, trace) = bapc_update(
            &initial,
            model,
            runner,
            &analysis.space,
            &analysis.observations,
            &settings,
        )?;
        if let Some(reason) = &trace.aborted {
            warnings.push(format!("model '{}': BaPC stopped early: {reason}", model.id()));
        }
        let loocv = match trace.records.last() {
            Some(r) => r.loocv.clone(),
            None => loocv_error(surrogate.basis(), surrogate.collocation(), surrogate.model_outputs())?,
        };
        results.push(ModelResult {
            id: model.id().to_string(),
            surrogate,
            loocv,
            trace,
        });
    }
    Ok(results)
}

fn write_surrogates(analysis: &Analysis, results: &[ModelResult]) -> Result<()> {
    let out = &analysis.output_dir;
    let grid = analysis.observations.grid();
    for r in results {
        let mut json = r.surrogate.to_json()?;
        json.push('\n');
        write_file(&out.join("surrogates").join(format!("{}.json", r.id)), json.as_bytes())?;
        write_file(
            &out.join("surrogates").join(format!("{}_loocv.json", r.id)),
            &to_json(&r.loocv)?,
        )?;
        write_with(&out.join("surrogates").join(format!("{}_loocv.csv", r.id)), |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let err = |e: csv::Error| apcjust_core::Error::InvalidArgument(format!("CSV write failed: {e}"));
            w.write_record(["quantity", "space", "time", "mse", "relative", "absolute_fallback"])
                .map_err(err)?;
            for (j, c) in grid.coords().iter().enumerate() {
                w.write_record([
                    c.quantity.clone(),
                    c.space.clone(),
                    c.time.clone(),
                    r.loocv.mse[j].to_string(),
                    r.loocv.relative[j].to_string(),
                    r.loocv.absolute_fallback[j].to_string(),
                ])
                .map_err(err)?;
            }
            w.flush()
                .map_err(|e| apcjust_core::Error::InvalidArgument(format!("CSV write failed: {e}")))
        })?;
        write_file(&out.join("traces").join(format!("{}.json", r.id)), &to_json(&r.trace)?)?;
        write_with(&out.join("traces").join(format!("{}.csv", r.id)), |buf| {
            r.trace.write_csv(grid, buf)
        })?;
    }
    Ok(())
}

fn all_subsets(analysis: &Analysis) -> Vec<(String, DataSubset)> {
    analysis
        .sweeps
        .iter()
        .flat_map(|s| s.subsets.iter().map(|d| (s.quantity.clone(), d.clone())))
        .collect()
}

/// Evidence, Weight_SM and posterior weights for every data subset.
pub fn model_selection(analysis: &Analysis, results: &[ModelResult]) -> Result<Vec<(String, BmeReport)>> {
    let mut reports = Vec::new();
    for (quantity, subset) in all_subsets(analysis) {
        measurement_covariance(&analysis.observations, &subset)?;
        let mut entries = Vec::with_capacity(results.len());
        for r in results {
            let est = bme_monte_carlo(
                &r.surrogate,
                &analysis.space,
                &analysis.observations,
                analysis.config.monte_carlo.bme,
                analysis.config.seeds.bme,
                &subset,
            )?;
            let s = approximation_covariance(&r.loocv, &subset)?;
            let w = weight_sm(
                &r.surrogate,
                r.surrogate.model_outputs(),
                &analysis.observations,
                &s,
                &subset,
            )?;
            entries.push((r.id.clone(), est, w));
        }
        let report = BmeReport::new(&subset, &entries, analysis.model_priors.as_deref())?;
        reports.push((quantity, report));
    }
    Ok(reports)
}

fn write_bms(analysis: &Analysis, reports: &[(String, BmeReport)]) -> Result<()> {
    let dir = analysis.output_dir.join("bms");
    for (_, r) in reports {
        write_with(&dir.join(format!("{}.csv", r.subset)), |buf| r.write_csv(buf))?;
        write_file(&dir.join(format!("{}.json", r.subset)), &to_json(r)?)?;
    }
    Ok(())
}

/// Confusion matrices (with the measurement-data row and column) for every
/// data subset.
pub fn justify(analysis: &Analysis, results: &[ModelResult]) -> Result<Vec<(String, ConfusionMatrix)>> {
    let candidates = results
        .iter()
        .map(|r| CandidateModel::from_loocv(r.id.clone(), r.surrogate.clone(), &r.loocv))
        .collect::<apcjust_core::Result<Vec<_>>>()?;
    let settings = ConfusionSettings {
        n_mc: analysis.config.monte_carlo.confusion,
        seed: analysis.config.seeds.confusion,
        include_measurement: true,
    };
    let mut out = Vec::new();
    for (quantity, subset) in all_subsets(analysis) {
        let m = confusion_matrix(&candidates, &analysis.space, &analysis.observations, &subset, &settings)?;
        out.push((quantity, m));
    }
    Ok(out)
}

fn write_confusion(analysis: &Analysis, matrices: &[(String, ConfusionMatrix)]) -> Result<()> {
    let dir = analysis.output_dir.join("confusion");
    for (_, m) in matrices {
        write_with(&dir.join(format!("{}_raw.csv", m.subset)), |buf| {
            m.write_csv(false, buf)
        })?;
        write_with(&dir.join(format!("{}_corrected.csv", m.subset)), |buf| {
            m.write_csv(true, buf)
        })?;
        write_file(&dir.join(format!("{}.json", m.subset)), &to_json(m)?)?;
    }
    Ok(())
}

fn write_rmse(analysis: &Analysis, table: &RmseTable) -> Result<()> {
    let dir = analysis.output_dir.join("rmse");
    write_with(&dir.join("rmse.csv"), |buf| table.write_csv(buf))?;
    write_file(&dir.join("rmse.json"), &to_json(table)?)
}

fn write_manifest(analysis: &Analysis, stage: Stage) -> Result<()> {
    let stages: &[&str] = match stage {
        Stage::Surrogate => &["surrogate"],
        Stage::Bms => &["surrogate", "bms"],
        Stage::Justify => &["surrogate", "justify"],
        Stage::All => &["surrogate", "bms", "justify", "export-plots"],
    };
    let manifest = Manifest {
        tool: "apcjust".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: analysis.config_sha256.clone(),
        seeds: analysis.config.seeds,
        degree: analysis.config.expansion.degree,
        n_updates: analysis.config.expansion.n_updates,
        monte_carlo: analysis.config.monte_carlo.clone(),
        parallelism: analysis.config.parallelism,
        parameters: analysis.space.names().to_vec(),
        models: analysis.models.iter().map(|m| m.id().to_string()).collect(),
        subsets: all_subsets(analysis).iter().map(|(_, s)| s.label()).collect(),
        stages: stages.iter().map(|s| s.to_string()).collect(),
    };
    write_file(&analysis.output_dir.join("manifest.json"), &to_json(&manifest)?)
}

/// Runs the requested stages of a validated analysis inside a worker pool of
/// the configured size.
pub fn run(analysis: &Analysis, stage: Stage) -> Result<RunSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(analysis.config.parallelism)
        .build()
        .map_err(|e| PipelineError::Artifact(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_stages(analysis, stage))
}

fn run_stages(analysis: &Analysis, stage: Stage) -> Result<RunSummary> {
    let runner = runner_for(analysis)?;
    let mut summary = RunSummary {
        output_dir: analysis.output_dir.clone(),
        ..Default::default()
    };
    let models = build_surrogates(analysis, &runner, &mut summary.warnings)?;
    write_surrogates(analysis, &models)?;
    if matches!(stage, Stage::Bms | Stage::All) {
        let reports = model_selection(analysis, &models)?;
        write_bms(analysis, &reports)?;
        summary.bme_reports = reports;
    }
    if matches!(stage, Stage::Justify | Stage::All) {
        let matrices = justify(analysis, &models)?;
        write_confusion(analysis, &matrices)?;
        let outputs: Vec<(String, &nalgebra::DMatrix<f64>)> = models
            .iter()
            .map(|m| (m.id.clone(), m.surrogate.model_outputs()))
            .collect();
        let table = rmse_table(&outputs, &analysis.observations)?;
        write_rmse(analysis, &table)?;
        summary.confusion = matrices;
        summary.rmse = Some(table);
    }
    write_manifest(analysis, stage)?;
    summary.fresh_executions = runner.fresh_executions();
    summary.models = models;
    if stage == Stage::All {
        export_plots(&analysis.output_dir)?;
    }
    Ok(summary)
}

/// Loads and validates `config_path`, then runs every stage.
pub fn run_pipeline(config_path: &Path) -> Result<RunSummary> {
    let analysis = config::load(config_path)?;
    run(&analysis, Stage::All)
}

fn read_json_dir<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<Vec<(PathBuf, T)>> {
    let mut paths: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(_) => return Ok(Vec::new()),
    };
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p)
                .map_err(|e| PipelineError::Artifact(format!("cannot read {}: {e}", p.display())))?;
            let value =
                serde_json::from_str(&text).map_err(|e| PipelineError::Artifact(format!("{}: {e}", p.display())))?;
            Ok((p, value))
        })
        .collect()
}

fn csv_err(e: csv::Error) -> PipelineError {
    PipelineError::Artifact(format!("CSV write failed: {e}"))
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let buf = w
        .into_inner()
        .map_err(|e| PipelineError::Artifact(format!("CSV write failed: {e}")))?;
    write_file(path, &buf)
}

/// Writes tidy CSV tables under `plots/` from the JSON artifacts found in
/// `output_dir`. Returns the files written.
pub fn export_plots(output_dir: &Path) -> Result<Vec<PathBuf>> {
    let plots = output_dir.join("plots");
    let mut written = Vec::new();

    let traces: Vec<(PathBuf, UpdateTrace)> = read_json_dir(&output_dir.join("traces"))?;
    if !traces.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "iteration", "n_points", "mean_loocv", "mean_relative_loocv"])
            .map_err(csv_err)?;
        for (_, t) in &traces {
            for r in &t.records {
                let all: Vec<usize> = (0..r.loocv.relative.len()).collect();
                w.write_record([
                    t.model_id.clone(),
                    r.iteration.to_string(),
                    r.n_points.to_string(),
                    r.loocv.mean_mse.to_string(),
                    r.loocv.mean_relative(&all).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        let path = plots.join("loocv_evolution.csv");
        finish(&path, w)?;
        written.push(path);
    }

    let bms: Vec<(PathBuf, BmeReport)> = read_json_dir(&output_dir.join("bms"))?;
    if !bms.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "subset",
            "model",
            "posterior_sm",
            "posterior_om",
            "log_bme_sm",
            "log_weight_sm",
        ])
        .map_err(csv_err)?;
        for (_, r) in &bms {
            for m in &r.models {
                w.write_record([
                    r.subset.clone(),
                    m.model.clone(),
                    m.posterior_sm.to_string(),
                    m.posterior_om.to_string(),
                    m.log_bme_sm.to_string(),
                    m.log_weight_sm.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        let path = plots.join("model_weights.csv");
        finish(&path, w)?;
        written.push(path);
    }

    let matrices: Vec<(PathBuf, ConfusionMatrix)> = read_json_dir(&output_dir.join("confusion"))?;
    if !matrices.is_empty() {
        let mut buf = Vec::new();
        for (i, (_, m)) in matrices.iter().enumerate() {
            let quantity = m.subset.rsplit_once("_n").map(|(q, _)| q).unwrap_or(&m.subset);
            m.write_tidy_csv(quantity, &mut buf, i == 0)?;
        }
        let path = plots.join("confusion.csv");
        write_file(&path, &buf)?;
        written.push(path);
    }

    let rmse: Vec<(PathBuf, RmseTable)> = read_json_dir(&output_dir.join("rmse"))?;
    if let Some((_, table)) = rmse.first() {
        let path = plots.join("rmse.csv");
        write_with(&path, |buf| table.write_csv(buf))?;
        written.push(path);
    }

    if written.is_empty() {
        return Err(PipelineError::Artifact(format!(
            "no artifacts found under {}; run the pipeline first",
            output_dir.display()
        )));
    }
    Ok(written)
}
