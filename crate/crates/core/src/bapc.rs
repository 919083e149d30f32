//! Iterative Bayesian refinement of a surrogate: each iteration adds the
//! prior sample with the highest posterior score as a new collocation point,
//! runs the original model there and refits by least squares.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{initial_collocation, MultivariateBasis, Provenance};
use crate::bayes::{log_likelihoods, LikelihoodSpec};
use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;
use crate::runner::{outputs_matrix, ModelSpec, ObservationSet, Runner};
use crate::stats::derive_seed;
use crate::surrogate::{loocv_error, solve_coefficients, LoocvReport, OutputGrid, Surrogate};

/// Relative per-coordinate distance under which a proposal counts as an
/// existing collocation point.
pub const PROPOSAL_DUPLICATE_TOLERANCE: f64 = 1e-6;

/// Builds the basis, picks `D+1` initial collocation points, runs the model
/// there and solves the square system.
pub fn initial_surrogate(
    model: &ModelSpec,
    runner: &Runner,
    space: &ParameterSpace,
    degree: usize,
) -> Result<Surrogate> {
    let basis = MultivariateBasis::new(space, degree)?;
    let set = initial_collocation(&basis, space, basis.len())?;
    let records = runner.evaluate_batch(model, &set.to_matrix())?;
    let outputs = outputs_matrix(&records)?;
    if outputs.nrows() != model.grid().len() {
        return Err(Error::Shape(format!(
            "model '{}' returned {} outputs, grid has {}",
            model.id(),
            outputs.nrows(),
            model.grid().len()
        )));
    }
    solve_coefficients(&basis, &set, &outputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BapcSettings {
    pub n_updates: usize,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for BapcSettings {
    fn default() -> Self {
        Self {
            n_updates: 10,
            n_mc: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedProposal {
    pub point: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// 1-based.
    pub iteration: usize,
    pub point: Vec<f64>,
    /// Log likelihood plus log prior density of the chosen sample.
    pub log_score: f64,
    /// Collocation count after the refit.
    pub n_points: usize,
    /// Largest relative residual of the refit surrogate at the new point.
    pub fit_residual: f64,
    pub loocv: LoocvReport,
    pub skipped: Vec<SkippedProposal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub model_id: String,
    pub parameter_names: Vec<String>,
    pub initial_points: usize,
    pub records: Vec<UpdateRecord>,
    /// Set when an iteration ran out of candidates.
    pub aborted: Option<String>,
}

impl UpdateTrace {
    pub fn final_points(&self) -> usize {
        self.records.last().map_or(self.initial_points, |r| r.n_points)
    }

    /// One row per iteration: chosen point, score, mean LOOCV and mean
    /// relative LOOCV per quantity of `grid`.
    pub fn write_csv<W: Write>(&self, grid: &OutputGrid, out: W) -> Result<()> {
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("CSV write failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let quantities = grid.quantities();
        let mut header = vec!["model".to_string(), "iteration".into(), "n_points".into()];
        header.extend(self.parameter_names.iter().cloned());
        header.extend([
            "log_score".into(),
            "mean_loocv".into(),
            "fit_residual".into(),
            "skipped".into(),
        ]);
        header.extend(quantities.iter().map(|q| format!("relative_loocv_{q}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![self.model_id.clone(), r.iteration.to_string(), r.n_points.to_string()];
            row.extend(r.point.iter().map(|v| v.to_string()));
            row.extend([
                r.log_score.to_string(),
                r.loocv.mean_mse.to_string(),
                r.fit_residual.to_string(),
                r.skipped.len().to_string(),
            ]);
            row.extend(
                quantities
                    .iter()
                    .map(|q| r.loocv.mean_relative(&grid.indices_of(q)).to_string()),
            );
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("CSV write failed: {e}")))?;
        Ok(())
    }
}

/// Runs `settings.n_updates` refinement iterations against the full
/// observation set.
pub fn bapc_update(
    surrogate: &Surrogate,
    model: &ModelSpec,
    runner: &Runner,
    space: &ParameterSpace,
    obs: &ObservationSet,
    settings: &BapcSettings,
) -> Result<(Surrogate, UpdateTrace)> {
    if surrogate.n_outputs() != obs.len() {
        return Err(Error::Shape(format!(
            "surrogate has {} outputs, observations {}",
            surrogate.n_outputs(),
            obs.len()
        )));
    }
    if settings.n_updates > 0 && settings.n_mc == 0 {
        return Err(Error::InvalidArgument("BaPC needs at least one prior sample".into()));
    }
    let r = LikelihoodSpec::new(obs.variances())?;
    let mut current = surrogate.clone();
    let mut trace = UpdateTrace {
        model_id: model.id().to_string(),
        parameter_names: space.names().to_vec(),
        initial_points: surrogate.collocation().len(),
        records: Vec::with_capacity(settings.n_updates),
        aborted: None,
    };

    for iteration in 1..=settings.n_updates {
        let samples = space.sample(settings.n_mc, derive_seed(settings.seed, iteration as u64))?;
        let predictions = current.evaluate(&samples);
        let lls = log_likelihoods(&predictions, obs.values(), &r);
        let rows: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
        let scores: Vec<f64> = rows
            .par_iter()
            .zip(&lls)
            .map(|(p, ll)| ll + space.log_density(p).unwrap_or(f64::NEG_INFINITY))
            .collect();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

        let mut skipped = Vec::new();
        let mut accepted = None;
        for &i in &order {
            if !scores[i].is_finite() {
                break;
            }
            let point = &rows[i];
            if current
                .collocation()
                .find_near(point, PROPOSAL_DUPLICATE_TOLERANCE)
                .is_some()
            {
                continue;
            }
            let record = runner.evaluate_point(model, point)?;
            match record.outputs {
                Some(out) if out.len() == current.n_outputs() => {
                    accepted = Some((i, out));
                    break;
                }
                Some(out) => skipped.push(SkippedProposal {
                    point: point.clone(),
                    reason: format!("expected {} outputs, got {}", current.n_outputs(), out.len()),
                }),
                None => skipped.push(SkippedProposal {
                    point: point.clone(),
                    reason: record.failure.unwrap_or_default(),
                }),
            }
        }
        let Some((i, out)) = accepted else {
            trace.aborted = Some(format!(
                "iteration {iteration}: no usable candidate among {} samples ({} model failures)",
                rows.len(),
                skipped.len()
            ));
            break;
        };

        let mut set = current.collocation().clone();
        set.push(rows[i].clone(), Provenance::BapcUpdate)?;
        let old = current.model_outputs();
        let outputs = DMatrix::from_fn(old.nrows(), old.ncols() + 1, |r, c| {
            if c < old.ncols() {
                old[(r, c)]
            } else {
                out[r]
            }
        });
        let refit = solve_coefficients(current.basis(), &set, &outputs)?;
        let loocv = loocv_error(refit.basis(), &set, &outputs)?;
        let fitted = refit.evaluate_point(&rows[i]);
        let fit_residual = out
            .iter()
            .zip(&fitted)
            .map(|(m, s)| {
                let scale = m.abs().max(f64::MIN_POSITIVE);
                (m - s).abs() / scale
            })
            .fold(0.0, f64::max);
        trace.records.push(UpdateRecord {
            iteration,
            point: rows[i].clone(),
            log_score: scores[i],
            n_points: set.len(),
            fit_residual,
            loocv,
            skipped,
        });
        current = refit;
    }
    Ok((current, trace))
}
