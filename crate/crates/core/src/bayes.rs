//! Gaussian likelihoods, Monte Carlo model evidence and the surrogate
//! correction factor.
//!
//! Densities are carried as natural logarithms throughout; linear values are
//! only produced on request.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;
use crate::runner::ObservationSet;
use crate::stats::{log_sum_exp, mean_and_std_error};
use crate::surrogate::{DataSubset, LoocvReport, Surrogate};

/// Smallest variance admitted into the approximation-error covariance.
pub const APPROXIMATION_VARIANCE_FLOOR: f64 = 1e-12;

/// Minimum Monte Carlo sample count for evidence estimates.
pub const MIN_MC_SAMPLES: usize = 1000;

/// Zero-mean Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    variances: Vec<f64>,
    log_norm: f64,
}

impl LikelihoodSpec {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::InvalidArgument("covariance has no entries".into()));
        }
        if let Some(i) = variances.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "covariance entry {i} is {}, must be positive",
                variances[i]
            )));
        }
        let n = variances.len() as f64;
        let log_det: f64 = variances.iter().map(|v| v.ln()).sum();
        let log_norm = -0.5 * (n * (2.0 * PI).ln() + log_det);
        Ok(Self { variances, log_norm })
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Log density at zero residual, the maximum of the density.
    pub fn log_peak(&self) -> f64 {
        self.log_norm
    }

    /// # Panics
    /// If `residual` does not have one entry per covariance entry.
    pub fn log_density(&self, residual: &[f64]) -> f64 {
        assert_eq!(residual.len(), self.variances.len(), "residual length");
        let q: f64 = residual.iter().zip(&self.variances).map(|(r, v)| r * r / v).sum();
        self.log_norm - 0.5 * q
    }

    /// Log density of `a - b`.
    pub fn log_density_between(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.variances.len(), "residual length");
        assert_eq!(b.len(), self.variances.len(), "residual length");
        let q: f64 = a
            .iter()
            .zip(b)
            .zip(&self.variances)
            .map(|((x, y), v)| (x - y) * (x - y) / v)
            .sum();
        self.log_norm - 0.5 * q
    }
}

pub fn gaussian_log_likelihood(residual: &[f64], cov: &LikelihoodSpec) -> Result<f64> {
    if residual.len() != cov.len() {
        return Err(Error::Shape(format!(
            "residual has {} entries, covariance {}",
            residual.len(),
            cov.len()
        )));
    }
    Ok(cov.log_density(residual))
}

pub fn gaussian_likelihood(residual: &[f64], cov: &LikelihoodSpec) -> Result<f64> {
    gaussian_log_likelihood(residual, cov).map(f64::exp)
}

/// Measurement-error covariance R restricted to a data subset.
pub fn measurement_covariance(obs: &ObservationSet, subset: &DataSubset) -> Result<LikelihoodSpec> {
    LikelihoodSpec::new(obs.subset_variances(subset))
}

/// Approximation-error covariance S: the per-coordinate LOOCV mean squared
/// error, floored at [`APPROXIMATION_VARIANCE_FLOOR`].
pub fn approximation_covariance(loocv: &LoocvReport, subset: &DataSubset) -> Result<LikelihoodSpec> {
    LikelihoodSpec::new(
        subset
            .indices
            .iter()
            .map(|&i| loocv.mse[i].max(APPROXIMATION_VARIANCE_FLOOR))
            .collect(),
    )
}

/// Log likelihood of `truth` under each row of `predictions`.
pub fn log_likelihoods(predictions: &DMatrix<f64>, truth: &[f64], cov: &LikelihoodSpec) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = predictions.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.par_iter().map(|p| cov.log_density_between(truth, p)).collect()
}

/// Monte Carlo evidence estimate with its prior sample and per-sample
/// log likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct BmeEstimate {
    pub log_bme: f64,
    /// Standard error of the linear estimate divided by the estimate.
    pub relative_std_error: f64,
    pub samples: DMatrix<f64>,
    pub log_likelihoods: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
}

impl BmeEstimate {
    /// Linear BME; fails when it is not representable as a positive `f64`.
    pub fn bme(&self) -> Result<f64> {
        let v = self.log_bme.exp();
        if v == 0.0 || !v.is_finite() {
            return Err(Error::Underflow(format!(
                "BME = exp({}) is not representable; report log_bme instead",
                self.log_bme
            )));
        }
        Ok(v)
    }
}

/// Mean of likelihoods given as logs, with its relative standard error.
pub fn log_mean_likelihood(log_likelihoods: &[f64]) -> Result<(f64, f64)> {
    let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Underflow(
            "every sample likelihood underflowed even in log space; \
             increase N_MC or check the observations"
                .into(),
        ));
    }
    let scaled: Vec<f64> = log_likelihoods.iter().map(|l| (l - max).exp()).collect();
    let (mean, se) = mean_and_std_error(&scaled);
    Ok((max + mean.ln(), se / mean))
}

/// Brute-force Monte Carlo evidence of a surrogate on a data subset: the mean
/// likelihood of the observations over `n_mc` prior samples.
pub fn bme_monte_carlo(
    surrogate: &Surrogate,
    space: &ParameterSpace,
    obs: &ObservationSet,
    n_mc: usize,
    seed: u64,
    subset: &DataSubset,
) -> Result<BmeEstimate> {
    if n_mc < MIN_MC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "N_MC = {n_mc} is below the minimum of {MIN_MC_SAMPLES}"
        )));
    }
    check_alignment(surrogate, obs)?;
    let samples = space.sample(n_mc, seed)?;
    let predictions = surrogate.evaluate_subset(&samples, &subset.indices);
    let cov = measurement_covariance(obs, subset)?;
    let lls = log_likelihoods(&predictions, &obs.subset_values(subset), &cov);
    let (log_bme, relative_std_error) = log_mean_likelihood(&lls)?;
    Ok(BmeEstimate {
        log_bme,
        relative_std_error,
        samples,
        log_likelihoods: lls,
        n_mc,
        seed,
    })
}

fn check_alignment(surrogate: &Surrogate, obs: &ObservationSet) -> Result<()> {
    if surrogate.n_outputs() != obs.len() {
        return Err(Error::Shape(format!(
            "surrogate has {} outputs, observations {}",
            surrogate.n_outputs(),
            obs.len()
        )));
    }
    Ok(())
}

/// The correction factor and the terms it was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSm {
    pub log_weight: f64,
    /// Log approximation-error density at each collocation point.
    pub log_densities: Vec<f64>,
    /// Normalized log posterior mass of each collocation point.
    pub log_masses: Vec<f64>,
}

/// `log Σ_i exp(log_densities_i + log_masses_i)` after normalizing the masses.
pub fn combine_weight(log_densities: &[f64], log_masses: &[f64]) -> Result<WeightSm> {
    if log_densities.len() != log_masses.len() || log_densities.is_empty() {
        return Err(Error::Shape(format!(
            "{} densities and {} masses",
            log_densities.len(),
            log_masses.len()
        )));
    }
    let total = log_sum_exp(log_masses);
    if !total.is_finite() {
        return Err(Error::Underflow("no collocation point carries posterior mass".into()));
    }
    let masses: Vec<f64> = log_masses.iter().map(|m| m - total).collect();
    let terms: Vec<f64> = log_densities.iter().zip(&masses).map(|(d, m)| d + m).collect();
    Ok(WeightSm {
        log_weight: log_sum_exp(&terms),
        log_densities: log_densities.to_vec(),
        log_masses: masses,
    })
}

/// Correction factor of one surrogate: the approximation-error densities of
/// its collocation residuals under `s`, averaged with weights given by the
/// normalized surrogate likelihood of the observations at each point.
pub fn weight_sm(
    surrogate: &Surrogate,
    colloc_outputs: &DMatrix<f64>,
    obs: &ObservationSet,
    s: &LikelihoodSpec,
    subset: &DataSubset,
) -> Result<WeightSm> {
    check_alignment(surrogate, obs)?;
    let p = surrogate.collocation().len();
    if colloc_outputs.ncols() != p || colloc_outputs.nrows() != surrogate.n_outputs() {
        return Err(Error::Shape(format!(
            "collocation outputs are {}x{}, expected {}x{p}",
            colloc_outputs.nrows(),
            colloc_outputs.ncols(),
            surrogate.n_outputs()
        )));
    }
    if s.len() != subset.len() {
        return Err(Error::Shape("S does not match the data subset".into()));
    }
    let pred = surrogate.evaluate_subset(&surrogate.collocation().to_matrix(), &subset.indices);
    let original = colloc_outputs.select_rows(&subset.indices).transpose();
    let r = measurement_covariance(obs, subset)?;
    let y0 = obs.subset_values(subset);
    let mut log_densities = Vec::with_capacity(p);
    let mut log_masses = Vec::with_capacity(p);
    for i in 0..p {
        let m: Vec<f64> = original.row(i).iter().copied().collect();
        let mt: Vec<f64> = pred.row(i).iter().copied().collect();
        log_densities.push(s.log_density_between(&m, &mt));
        log_masses.push(r.log_density_between(&y0, &mt));
    }
    combine_weight(&log_densities, &log_masses)
}

/// Posterior model probabilities from log evidences and prior probabilities
/// (uniform when `None`).
pub fn posterior_model_weights(log_bmes: &[f64], priors: Option<&[f64]>) -> Result<Vec<f64>> {
    if log_bmes.is_empty() {
        return Err(Error::InvalidArgument("no models".into()));
    }
    let log_priors: Vec<f64> = match priors {
        None => vec![0.0; log_bmes.len()],
        Some(p) => {
            if p.len() != log_bmes.len() {
                return Err(Error::Shape("one prior probability per model".into()));
            }
            if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidArgument(
                    "model prior probabilities must be positive".into(),
                ));
            }
            p.iter().map(|v| v.ln()).collect()
        }
    };
    let joint: Vec<f64> = log_bmes.iter().zip(&log_priors).map(|(b, p)| b + p).collect();
    if !log_sum_exp(&joint).is_finite() {
        return Err(Error::Underflow("every model has zero evidence".into()));
    }
    Ok(crate::stats::normalize_log_weights(&joint))
}

/// Linear value when representable as a positive finite `f64`.
pub fn representable(log_value: f64) -> Option<f64> {
    let v = log_value.exp();
    (v > 0.0 && v.is_finite()).then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBme {
    pub model: String,
    pub log_bme_sm: f64,
    pub log_weight_sm: f64,
    /// `log_bme_sm + log_weight_sm`.
    pub log_bme_om: f64,
    pub bme_sm: Option<f64>,
    pub weight_sm: Option<f64>,
    /// `bme_sm * weight_sm` when both are representable and so is the product.
    pub bme_om: Option<f64>,
    pub relative_std_error: f64,
    pub posterior_sm: f64,
    pub posterior_om: f64,
}

/// Evidence, correction and posterior weights of a set of models on one data
/// subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmeReport {
    pub subset: String,
    pub n_mc: usize,
    pub seed: u64,
    pub models: Vec<ModelBme>,
}

impl BmeReport {
    /// `entries` holds (model id, evidence estimate, correction) per model.
    pub fn new(
        subset: &DataSubset,
        entries: &[(String, BmeEstimate, WeightSm)],
        priors: Option<&[f64]>,
    ) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::InvalidArgument("no models".into()))?;
        let log_sm: Vec<f64> = entries.iter().map(|e| e.1.log_bme).collect();
        let log_om: Vec<f64> = entries.iter().map(|e| e.1.log_bme + e.2.log_weight).collect();
        let post_sm = posterior_model_weights(&log_sm, priors)?;
        let post_om = posterior_model_weights(&log_om, priors)?;
        let models = entries
            .iter()
            .enumerate()
            .map(|(k, (id, est, w))| {
                let bme_sm = representable(est.log_bme);
                let weight_sm = representable(w.log_weight);
                let bme_om = match (bme_sm, weight_sm) {
                    (Some(a), Some(b)) => Some(a * b).filter(|v| *v > 0.0 && v.is_finite()),
                    _ => None,
                };
                ModelBme {
                    model: id.clone(),
                    log_bme_sm: est.log_bme,
                    log_weight_sm: w.log_weight,
                    log_bme_om: log_om[k],
                    bme_sm,
                    weight_sm,
                    bme_om,
                    relative_std_error: est.relative_std_error,
                    posterior_sm: post_sm[k],
                    posterior_om: post_om[k],
                }
            })
            .collect();
        Ok(Self {
            subset: subset.label(),
            n_mc: first.1.n_mc,
            seed: first.1.seed,
            models,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("CSV write failed: {e}"));
        w.write_record([
            "subset",
            "model",
            "log_bme_sm",
            "log_weight_sm",
            "log_bme_om",
            "bme_sm",
            "weight_sm",
            "bme_om",
            "relative_std_error",
            "posterior_sm",
            "posterior_om",
            "n_mc",
            "seed",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.models {
            w.write_record([
                self.subset.clone(),
                m.model.clone(),
                m.log_bme_sm.to_string(),
                m.log_weight_sm.to_string(),
                m.log_bme_om.to_string(),
                opt(m.bme_sm),
                opt(m.weight_sm),
                opt(m.bme_om),
                m.relative_std_error.to_string(),
                m.posterior_sm.to_string(),
                m.posterior_om.to_string(),
                self.n_mc.to_string(),
                self.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("CSV write failed: {e}")))?;
        Ok(())
    }
}
