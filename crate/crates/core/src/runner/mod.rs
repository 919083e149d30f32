//! Black-box model evaluation with caching and parallel dispatch.

pub mod cache;
pub mod external;
pub mod observations;
pub mod toy;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;
use crate::surrogate::OutputGrid;

pub use cache::EvaluationCache;
pub use external::ExternalCommand;
pub use observations::{read_observations, ObservationSet, DEFAULT_RELATIVE_ERROR};
pub use toy::ToyModel;

/// In-process model: consumed parameters in, one value per output coordinate out.
pub type ModelFn = Arc<dyn Fn(&[f64]) -> std::result::Result<Vec<f64>, String> + Send + Sync>;

#[derive(Clone)]
pub enum ModelKind {
    Toy(ToyModel),
    External(ExternalCommand),
    Function(ModelFn),
}

impl fmt::Debug for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Toy(t) => f.debug_tuple("Toy").field(t).finish(),
            ModelKind::External(c) => f.debug_tuple("External").field(c).finish(),
            ModelKind::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    id: String,
    kind: ModelKind,
    parameters: Vec<String>,
    indices: Vec<usize>,
    grid: OutputGrid,
}

impl ModelSpec {
    /// `parameters` names the entries of `space` the model consumes, in the
    /// order it expects them.
    pub fn new(
        id: impl Into<String>,
        kind: ModelKind,
        parameters: Vec<String>,
        space: &ParameterSpace,
        grid: OutputGrid,
    ) -> Result<Self> {
        let id = id.into();
        let mut indices = Vec::with_capacity(parameters.len());
        for name in &parameters {
            match space.index_of(name) {
                Some(i) => indices.push(i),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "model '{id}' consumes unknown parameter '{name}'"
                    )))
                }
            }
        }
        if let ModelKind::Toy(toy) = &kind {
            let roles = toy.parameter_roles();
            if roles.len() != parameters.len() {
                return Err(Error::InvalidArgument(format!(
                    "model '{id}' ({}) consumes {} parameters ({}), {} given",
                    toy.name(),
                    roles.len(),
                    roles.join(", "),
                    parameters.len()
                )));
            }
            toy.check_grid(&grid)?;
        }
        Ok(Self {
            id,
            kind,
            parameters,
            indices,
            grid,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn parameters(&self) -> &[String] {
        &self.parameters
    }

    pub fn grid(&self) -> &OutputGrid {
        &self.grid
    }

    /// The consumed sub-vector of a full parameter point.
    pub fn consumed(&self, point: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| point[i]).collect()
    }

    fn execute(&self, params: &[f64]) -> std::result::Result<Vec<f64>, String> {
        let n = self.grid.len();
        let out = match &self.kind {
            ModelKind::Toy(t) => t.evaluate(params, &self.grid).map_err(|e| e.to_string())?,
            ModelKind::External(c) => c.run(&self.parameters, params, n)?,
            ModelKind::Function(f) => f(params)?,
        };
        if out.len() != n {
            return Err(format!("output count mismatch: expected {n} values, got {}", out.len()));
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(format!("non-finite output at coordinate {i}"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluationSource {
    Cache,
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub model_id: String,
    /// Full parameter point, all parameters of the space.
    pub parameters: Vec<f64>,
    pub outputs: Option<Vec<f64>>,
    pub failure: Option<String>,
    pub wall_time_seconds: f64,
    pub provenance: EvaluationSource,
}

impl EvaluationRecord {
    pub fn is_ok(&self) -> bool {
        self.outputs.is_some()
    }
}

/// Dispatches model evaluations through an optional cache.
#[derive(Debug)]
pub struct Runner {
    cache: Option<EvaluationCache>,
    parallelism: usize,
    fresh: AtomicUsize,
}

impl Runner {
    pub fn new(parallelism: usize) -> Result<Self> {
        if parallelism == 0 {
            return Err(Error::InvalidArgument("parallelism must be at least 1".into()));
        }
        Ok(Self {
            cache: None,
            parallelism,
            fresh: AtomicUsize::new(0),
        })
    }

    pub fn with_cache(mut self, cache: EvaluationCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn cache(&self) -> Option<&EvaluationCache> {
        self.cache.as_ref()
    }

    /// Number of model executions (cache misses) since construction.
    pub fn fresh_executions(&self) -> usize {
        self.fresh.load(Ordering::SeqCst)
    }

    pub fn evaluate_point(&self, model: &ModelSpec, point: &[f64]) -> Result<EvaluationRecord> {
        let params = model.consumed(point);
        let start = Instant::now();
        if let Some(cache) = &self.cache {
            if let Some(outputs) = cache.get(model.id(), &params)? {
                if outputs.len() == model.grid().len() {
                    return Ok(EvaluationRecord {
                        model_id: model.id().to_string(),
                        parameters: point.to_vec(),
                        outputs: Some(outputs),
                        failure: None,
                        wall_time_seconds: start.elapsed().as_secs_f64(),
                        provenance: EvaluationSource::Cache,
                    });
                }
            }
        }
        self.fresh.fetch_add(1, Ordering::SeqCst);
        let result = model.execute(&params);
        let wall = start.elapsed().as_secs_f64();
        let (outputs, failure) = match result {
            Ok(out) => {
                if let Some(cache) = &self.cache {
                    cache.insert(model.id(), &params, &out)?;
                }
                (Some(out), None)
            }
            Err(msg) => (None, Some(msg)),
        };
        Ok(EvaluationRecord {
            model_id: model.id().to_string(),
            parameters: point.to_vec(),
            outputs,
            failure,
            wall_time_seconds: wall,
            provenance: EvaluationSource::Fresh,
        })
    }

    /// Evaluates every row of `points`. Results keep input order; a failing
    /// point yields a record with `failure` set and the batch continues.
    pub fn evaluate_batch(&self, model: &ModelSpec, points: &DMatrix<f64>) -> Result<Vec<EvaluationRecord>> {
        let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
        if self.parallelism == 1 {
            return rows.iter().map(|p| self.evaluate_point(model, p)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
        pool.install(|| rows.par_iter().map(|p| self.evaluate_point(model, p)).collect())
    }
}

/// Stacks successful records into an `N_out × n` matrix; fails on the first
/// failed record.
pub fn outputs_matrix(records: &[EvaluationRecord]) -> Result<DMatrix<f64>> {
    let mut cols: Vec<&Vec<f64>> = Vec::with_capacity(records.len());
    for r in records {
        match &r.outputs {
            Some(o) => cols.push(o),
            None => {
                return Err(Error::ModelFailure {
                    model: r.model_id.clone(),
                    reason: format!(
                        "at {:?}: {}",
                        r.parameters,
                        r.failure.as_deref().unwrap_or("unknown failure")
                    ),
                })
            }
        }
    }
    let n_out = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(n_out, cols.len(), |r, c| cols[c][r]))
}
