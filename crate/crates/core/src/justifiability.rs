//! Model confusion matrices, their surrogate corrections, and the
//! goodness-of-fit RMSE table.
//!
//! Rows of a confusion matrix are candidate models, columns the model that
//! generated the synthetic truths. An optional extra row and column stand for
//! the measurement data (MD), represented by noisy replicates of the
//! observations.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{combine_weight, measurement_covariance, LikelihoodSpec, APPROXIMATION_VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;
use crate::runner::ObservationSet;
use crate::stats::{derive_seed, log_sum_exp, normalize_log_weights};
use crate::surrogate::{DataSubset, LoocvReport, OutputGrid, Surrogate};

pub const MEASUREMENT_LABEL: &str = "MD";

/// Truths processed per block of the pairwise likelihood computation.
const TRUTH_BLOCK: usize = 256;

/// A competing model as seen by the justifiability analysis: its surrogate
/// (which carries the original outputs at its collocation points) and the
/// per-coordinate approximation-error variances.
#[derive(Debug, Clone)]
pub struct CandidateModel {
    pub id: String,
    pub surrogate: Surrogate,
    pub approximation_variances: Vec<f64>,
}

impl CandidateModel {
    pub fn new(id: impl Into<String>, surrogate: Surrogate, approximation_variances: Vec<f64>) -> Result<Self> {
        if approximation_variances.len() != surrogate.n_outputs() {
            return Err(Error::Shape(format!(
                "{} approximation variances for {} outputs",
                approximation_variances.len(),
                surrogate.n_outputs()
            )));
        }
        Ok(Self {
            id: id.into(),
            surrogate,
            approximation_variances,
        })
    }

    /// Variances from the surrogate's LOOCV mean squared errors.
    pub fn from_loocv(id: impl Into<String>, surrogate: Surrogate, loocv: &LoocvReport) -> Result<Self> {
        let v = loocv.mse.iter().map(|m| m.max(APPROXIMATION_VARIANCE_FLOOR)).collect();
        Self::new(id, surrogate, v)
    }

    pub fn approximation_covariance(&self, subset: &DataSubset) -> Result<LikelihoodSpec> {
        LikelihoodSpec::new(
            subset
                .indices
                .iter()
                .map(|&i| self.approximation_variances[i])
                .collect(),
        )
    }
}

/// Log correction factors of one (candidate, reference) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossWeights {
    /// Candidate surrogate's own approximation error.
    pub log_w1: f64,
    /// Reference surrogate's own approximation error.
    pub log_w2: f64,
}

/// Correction factors for candidate `l` judged against reference `k`.
///
/// `Weight_SM1` averages the densities of `l`'s collocation residuals under
/// `S_l`, each point massed by the normalized likelihood of `M̃_l` there given
/// `M̃_k` as truth. `Weight_SM2` is the mirror image over `k`'s collocation
/// points; the original `M_l` is not available at those points, so `M̃_l`
/// stands in for it in the masses.
pub fn cross_correction(
    candidate: &CandidateModel,
    reference: &CandidateModel,
    r: &LikelihoodSpec,
    subset: &DataSubset,
) -> Result<CrossWeights> {
    let log_w1 = one_sided(candidate, reference, r, subset)?;
    let log_w2 = one_sided(reference, candidate, r, subset)?;
    Ok(CrossWeights { log_w1, log_w2 })
}

/// Residual densities of `own` at its collocation points, massed by the
/// likelihood of `own`'s surrogate under `other`'s surrogate as truth.
fn one_sided(own: &CandidateModel, other: &CandidateModel, r: &LikelihoodSpec, subset: &DataSubset) -> Result<f64> {
    let set = own.surrogate.collocation();
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "model '{}' has no collocation points",
            own.id
        )));
    }
    let s = own.approximation_covariance(subset)?;
    let pts = set.to_matrix();
    let own_pred = own.surrogate.evaluate_subset(&pts, &subset.indices);
    let other_pred = other.surrogate.evaluate_subset(&pts, &subset.indices);
    let original = own.surrogate.model_outputs().select_rows(&subset.indices).transpose();
    let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
    let mut densities = Vec::with_capacity(set.len());
    let mut masses = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let op = row(&own_pred, i);
        densities.push(s.log_density_between(&row(&original, i), &op));
        masses.push(r.log_density_between(&row(&other_pred, i), &op));
    }
    Ok(combine_weight(&densities, &masses)?.log_weight)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionSettings {
    pub n_mc: usize,
    pub seed: u64,
    pub include_measurement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub subset: String,
    pub n_mc: usize,
    pub seed: u64,
    /// `raw[row][col]`: expected posterior weight of candidate `row` when
    /// `col` generated the data.
    pub raw: Vec<Vec<f64>>,
    /// Monte Carlo standard error of each raw entry.
    pub std_errors: Vec<Vec<f64>>,
    /// Log correction factors; zero on cells involving the measurement data.
    pub log_w1: Vec<Vec<f64>>,
    pub log_w2: Vec<Vec<f64>>,
    /// Raw entries times both correction factors, columns renormalized.
    pub corrected: Vec<Vec<f64>>,
}

/// One ensemble of predictions on the data subset, centred on the
/// observations and scaled by their standard deviations.
struct Ensemble {
    scaled: DMatrix<f64>,
    scaled_t: DMatrix<f64>,
    norms: Vec<f64>,
}

impl Ensemble {
    fn new(predictions: &DMatrix<f64>, y0: &[f64], sigma: &[f64]) -> Self {
        let scaled = DMatrix::from_fn(predictions.nrows(), predictions.ncols(), |i, c| {
            (predictions[(i, c)] - y0[c]) / sigma[c]
        });
        let norms = scaled.row_iter().map(|r| r.norm_squared()).collect();
        Self {
            scaled_t: scaled.transpose(),
            scaled,
            norms,
        }
    }
}

/// `log BME` of `candidate` for each truth row in `truths[start..start+len]`.
fn block_log_bme(truths: &Ensemble, start: usize, len: usize, candidate: &Ensemble, log_peak: f64) -> Vec<f64> {
    let block = truths.scaled.rows(start, len);
    let dots = block * &candidate.scaled_t;
    let n = candidate.norms.len() as f64;
    (0..len)
        .map(|j| {
            let tn = truths.norms[start + j];
            let lls: Vec<f64> = dots
                .row(j)
                .iter()
                .zip(&candidate.norms)
                .map(|(d, pn)| log_peak - 0.5 * (tn + pn - 2.0 * d).max(0.0))
                .collect();
            log_sum_exp(&lls) - n.ln()
        })
        .collect()
}

/// Builds the extended confusion matrix on one data subset.
///
/// Every model's synthetic truths and candidate predictions come from the
/// same `n_mc` prior samples. For each truth the evidence of every candidate
/// is the mean likelihood over its predictions (covariance R of the subset),
/// the evidences are normalized into posterior weights, and the weights are
/// averaged over truths.
pub fn confusion_matrix(
    models: &[CandidateModel],
    space: &ParameterSpace,
    obs: &ObservationSet,
    subset: &DataSubset,
    settings: &ConfusionSettings,
) -> Result<ConfusionMatrix> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models".into()));
    }
    if settings.n_mc < 2 {
        return Err(Error::InvalidArgument("confusion matrix needs N_MC >= 2".into()));
    }
    for m in models {
        if m.surrogate.n_outputs() != obs.len() {
            return Err(Error::Shape(format!(
                "model '{}' has {} outputs, observations {}",
                m.id,
                m.surrogate.n_outputs(),
                obs.len()
            )));
        }
        if m.surrogate.basis().n_params() != space.len() {
            return Err(Error::Shape(format!(
                "model '{}' is not defined on the shared parameter space",
                m.id
            )));
        }
    }
    let r = measurement_covariance(obs, subset)?;
    let y0 = obs.subset_values(subset);
    let sigma: Vec<f64> = subset.indices.iter().map(|&i| obs.sigma()[i]).collect();
    let samples = space.sample(settings.n_mc, settings.seed)?;

    let mut ensembles: Vec<Ensemble> = models
        .par_iter()
        .map(|m| Ensemble::new(&m.surrogate.evaluate_subset(&samples, &subset.indices), &y0, &sigma))
        .collect();
    let mut labels: Vec<String> = models.iter().map(|m| m.id.clone()).collect();
    if settings.include_measurement {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, 0x4d44));
        let mut replicates = DMatrix::zeros(settings.n_mc, y0.len());
        for i in 0..settings.n_mc {
            for c in 0..y0.len() {
                let z: f64 = StandardNormal.sample(&mut rng);
                replicates[(i, c)] = y0[c] + sigma[c] * z;
            }
        }
        ensembles.push(Ensemble::new(&replicates, &y0, &sigma));
        labels.push(MEASUREMENT_LABEL.to_string());
    }
    let n = labels.len();
    let log_peak = r.log_peak();

    let blocks: Vec<(usize, usize, usize)> = (0..n)
        .flat_map(|col| {
            (0..settings.n_mc)
                .step_by(TRUTH_BLOCK)
                .map(move |start| (col, start, TRUTH_BLOCK.min(settings.n_mc - start)))
        })
        .collect();
    // per block: weights[row][truth]
    let block_weights: Vec<Result<Vec<Vec<f64>>>> = blocks
        .par_iter()
        .map(|&(col, start, len)| {
            let per_row: Vec<Vec<f64>> = ensembles
                .iter()
                .map(|cand| block_log_bme(&ensembles[col], start, len, cand, log_peak))
                .collect();
            let mut weights = vec![vec![0.0; len]; n];
            for j in 0..len {
                let logs: Vec<f64> = per_row.iter().map(|v| v[j]).collect();
                if !log_sum_exp(&logs).is_finite() {
                    return Err(Error::Underflow(format!(
                        "every candidate likelihood underflowed for truth {} of '{}'; \
                         increase N_MC",
                        start + j,
                        labels[col]
                    )));
                }
                for (row, w) in normalize_log_weights(&logs).into_iter().enumerate() {
                    weights[row][j] = w;
                }
            }
            Ok(weights)
        })
        .collect();

    let mut per_column: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(settings.n_mc); n]; n];
    for (&(col, _, _), w) in blocks.iter().zip(block_weights) {
        let w = w?;
        for (row, vals) in w.into_iter().enumerate() {
            per_column[col][row].extend(vals);
        }
    }
    let mut raw = vec![vec![0.0; n]; n];
    let mut std_errors = vec![vec![0.0; n]; n];
    for col in 0..n {
        for row in 0..n {
            let (mean, se) = crate::stats::mean_and_std_error(&per_column[col][row]);
            raw[row][col] = mean;
            std_errors[row][col] = se;
        }
    }

    let mut log_w1 = vec![vec![0.0; n]; n];
    let mut log_w2 = vec![vec![0.0; n]; n];
    for (l, cand) in models.iter().enumerate() {
        for (k, reference) in models.iter().enumerate() {
            let w = cross_correction(cand, reference, &r, subset)?;
            log_w1[l][k] = w.log_w1;
            log_w2[l][k] = w.log_w2;
        }
    }
    let corrected = correct(&raw, &log_w1, &log_w2);

    Ok(ConfusionMatrix {
        labels,
        subset: subset.label(),
        n_mc: settings.n_mc,
        seed: settings.seed,
        raw,
        std_errors,
        log_w1,
        log_w2,
        corrected,
    })
}

/// Applies the correction factors in log space and renormalizes columns.
pub fn correct(raw: &[Vec<f64>], log_w1: &[Vec<f64>], log_w2: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = raw.len();
    let mut out = vec![vec![0.0; n]; n];
    for col in 0..n {
        let logs: Vec<f64> = (0..n)
            .map(|row| raw[row][col].ln() + log_w1[row][col] + log_w2[row][col])
            .collect();
        for (row, w) in normalize_log_weights(&logs).into_iter().enumerate() {
            out[row][col] = w;
        }
    }
    out
}

impl ConfusionMatrix {
    pub fn column_sums(&self, corrected: bool) -> Vec<f64> {
        let m = if corrected { &self.corrected } else { &self.raw };
        (0..self.labels.len())
            .map(|c| m.iter().map(|row| row[c]).sum())
            .collect()
    }

    pub fn diagonal(&self, corrected: bool) -> Vec<f64> {
        let m = if corrected { &self.corrected } else { &self.raw };
        (0..self.labels.len()).map(|i| m[i][i]).collect()
    }

    /// Row index of the largest entry in each column.
    pub fn column_argmax(&self, corrected: bool) -> Vec<usize> {
        let m = if corrected { &self.corrected } else { &self.raw };
        (0..self.labels.len())
            .map(|c| {
                (0..self.labels.len())
                    .max_by(|&a, &b| m[a][c].total_cmp(&m[b][c]).then(b.cmp(&a)))
                    .expect("non-empty")
            })
            .collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Square CSV: header `candidate,<reference labels>`, one row per candidate.
    pub fn write_csv<W: Write>(&self, corrected: bool, out: W) -> Result<()> {
        let m = if corrected { &self.corrected } else { &self.raw };
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("CSV write failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["candidate".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, row) in m.iter().enumerate() {
            let mut rec = vec![self.labels[i].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("CSV write failed: {e}")))?;
        Ok(())
    }

    /// Long format, one line per cell, for plotting.
    pub fn write_tidy_csv<W: Write>(&self, quantity: &str, out: W, header: bool) -> Result<()> {
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("CSV write failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        if header {
            w.write_record([
                "quantity",
                "subset",
                "candidate",
                "reference",
                "raw",
                "std_error",
                "log_w1",
                "log_w2",
                "corrected",
            ])
            .map_err(csv_err)?;
        }
        for (r, cand) in self.labels.iter().enumerate() {
            for (c, refr) in self.labels.iter().enumerate() {
                w.write_record([
                    quantity.to_string(),
                    self.subset.clone(),
                    cand.clone(),
                    refr.clone(),
                    self.raw[r][c].to_string(),
                    self.std_errors[r][c].to_string(),
                    self.log_w1[r][c].to_string(),
                    self.log_w2[r][c].to_string(),
                    self.corrected[r][c].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("CSV write failed: {e}")))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub model: String,
    pub n_points: usize,
    /// One value per quantity, in the table's quantity order.
    pub rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub quantities: Vec<String>,
    pub rows: Vec<RmseRow>,
}

/// Mean over each model's collocation points of the Euclidean distance between
/// its original outputs and the observations, separately per quantity.
pub fn rmse_table(models: &[(String, &DMatrix<f64>)], obs: &ObservationSet) -> Result<RmseTable> {
    let grid: &OutputGrid = obs.grid();
    let quantities = grid.quantities();
    let mut rows = Vec::with_capacity(models.len());
    for (id, outputs) in models {
        if outputs.nrows() != obs.len() {
            return Err(Error::Shape(format!(
                "model '{id}' has {} outputs, observations {}",
                outputs.nrows(),
                obs.len()
            )));
        }
        let p = outputs.ncols();
        if p == 0 {
            return Err(Error::InvalidArgument(format!(
                "model '{id}' has no collocation outputs"
            )));
        }
        let rmse = quantities
            .iter()
            .map(|q| {
                let idx = grid.indices_of(q);
                (0..p)
                    .map(|i| {
                        idx.iter()
                            .map(|&j| (outputs[(j, i)] - obs.values()[j]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .sum::<f64>()
                    / p as f64
            })
            .collect();
        rows.push(RmseRow {
            model: id.clone(),
            n_points: p,
            rmse,
        });
    }
    Ok(RmseTable { quantities, rows })
}

impl RmseTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("CSV write failed: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "quantity", "n_points", "rmse"])
            .map_err(csv_err)?;
        for row in &self.rows {
            for (q, v) in self.quantities.iter().zip(&row.rmse) {
                w.write_record([row.model.clone(), q.clone(), row.n_points.to_string(), v.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(format!("CSV write failed: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{initial_collocation, MultivariateBasis};
    use crate::param_space::Prior1D;
    use crate::surrogate::{solve_coefficients, OutputCoordinate};
    use proptest::prelude::*;

    fn space() -> ParameterSpace {
        ParameterSpace::new(vec![
            ("a".into(), Prior1D::uniform(0.0, 1.0).unwrap()),
            ("b".into(), Prior1D::uniform(0.0, 1.0).unwrap()),
        ])
        .unwrap()
    }

    fn grid(n: usize) -> OutputGrid {
        OutputGrid::new(
            (0..n)
                .map(|i| OutputCoordinate::new(format!("{i}"), "0", "q"))
                .collect(),
        )
        .unwrap()
    }

    fn fit(f: impl Fn(&[f64]) -> Vec<f64>, n_out: usize, extra: usize) -> Surrogate {
        let s = space();
        let basis = MultivariateBasis::new(&s, 2).unwrap();
        let set = initial_collocation(&basis, &s, basis.len() + extra).unwrap();
        let cols: Vec<Vec<f64>> = set.points().iter().map(|p| f(p)).collect();
        let y = DMatrix::from_fn(n_out, cols.len(), |r, c| cols[c][r]);
        solve_coefficients(&basis, &set, &y).unwrap()
    }

    fn exact(id: &str, f: impl Fn(&[f64]) -> Vec<f64>, n_out: usize) -> CandidateModel {
        CandidateModel::new(id, fit(f, n_out, 0), vec![1e-6; n_out]).unwrap()
    }

    #[test]
    fn identical_models_split_evenly() {
        let f = |p: &[f64]| vec![1.0 + p[0], 2.0 + p[0] * p[1]];
        let models = vec![exact("x", f, 2), exact("y", f, 2)];
        let obs = ObservationSet::with_relative_error(grid(2), vec![1.5, 2.2], 0.2).unwrap();
        let subset = DataSubset::full(obs.grid());
        let settings = ConfusionSettings {
            n_mc: 300,
            seed: 4,
            include_measurement: false,
        };
        let cm = confusion_matrix(&models, &space(), &obs, &subset, &settings).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((cm.raw[r][c] - 0.5).abs() < 1e-12);
                assert!((cm.corrected[r][c] - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn model_equal_to_data_identifies_itself() {
        // MD's evidence at y0 is peak * E[exp(-chi2_n / 2)] = peak * 2^(-n/2),
        // so the model's self weight tends to 1 / (1 + 2^(-n/2)).
        for n in [3usize, 40] {
            let values: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let obs = ObservationSet::new(grid(n), values.clone(), vec![1e-4; n]).unwrap();
            let models = vec![exact("m", move |_| values.clone(), n)];
            let subset = DataSubset::full(obs.grid());
            let settings = ConfusionSettings {
                n_mc: 4000,
                seed: 1,
                include_measurement: true,
            };
            let cm = confusion_matrix(&models, &space(), &obs, &subset, &settings).unwrap();
            assert_eq!(cm.labels, vec!["m".to_string(), "MD".to_string()]);
            let expected = 1.0 / (1.0 + 2f64.powf(-(n as f64) / 2.0));
            assert!((cm.raw[0][0] - expected).abs() < 0.02, "{n}: {:?}", cm.raw);
            for s in cm.column_sums(false).into_iter().chain(cm.column_sums(true)) {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distinct_models_separate_with_data() {
        let models = vec![
            exact("lo", |p: &[f64]| vec![1.0 + 0.1 * p[0]; 4], 4),
            exact("hi", |p: &[f64]| vec![3.0 + 0.1 * p[1]; 4], 4),
        ];
        let obs = ObservationSet::with_relative_error(grid(4), vec![2.0; 4], 0.2).unwrap();
        let subset = DataSubset::full(obs.grid());
        let settings = ConfusionSettings {
            n_mc: 200,
            seed: 2,
            include_measurement: true,
        };
        let cm = confusion_matrix(&models, &space(), &obs, &subset, &settings).unwrap();
        assert!(cm.raw[0][0] > 0.9 && cm.raw[1][1] > 0.9);
        let again = confusion_matrix(&models, &space(), &obs, &subset, &settings).unwrap();
        assert_eq!(again, cm);
    }

    #[test]
    fn self_cell_factors_coincide() {
        let f = |p: &[f64]| vec![(p[0] * 3.0).sin() + p[1], (p[1] * 2.0).exp()];
        let m = CandidateModel::new("m", fit(f, 2, 3), vec![1e-3, 2e-3]).unwrap();
        let obs = ObservationSet::with_relative_error(grid(2), vec![0.9, 2.0], 0.2).unwrap();
        let subset = DataSubset::full(obs.grid());
        let r = measurement_covariance(&obs, &subset).unwrap();
        let w = cross_correction(&m, &m, &r, &subset).unwrap();
        assert_eq!(w.log_w1, w.log_w2);
        // masses are uniform when a model is its own reference
        let s = m.approximation_covariance(&subset).unwrap();
        let pts = m.surrogate.collocation().to_matrix();
        let pred = m.surrogate.evaluate(&pts);
        let dens: Vec<f64> = (0..pts.nrows())
            .map(|i| {
                let a: Vec<f64> = m.surrogate.model_outputs().column(i).iter().copied().collect();
                let b: Vec<f64> = pred.row(i).iter().copied().collect();
                s.log_density_between(&a, &b)
            })
            .collect();
        let single = combine_weight(&dens, &vec![0.0; dens.len()]).unwrap().log_weight;
        assert!((w.log_w1 + w.log_w2 - 2.0 * single).abs() < 1e-10);
    }

    #[test]
    fn worse_candidate_fidelity_lowers_only_w1() {
        let f = |p: &[f64]| vec![1.0 + p[0] + 0.3 * (p[1] * 4.0).sin()];
        let g = |p: &[f64]| vec![1.2 + 0.5 * p[1]];
        let l = CandidateModel::new("l", fit(f, 1, 2), vec![1e-2]).unwrap();
        let k = CandidateModel::new("k", fit(g, 1, 2), vec![1e-2]).unwrap();
        let obs = ObservationSet::with_relative_error(grid(1), vec![1.4], 0.2).unwrap();
        let subset = DataSubset::full(obs.grid());
        let r = measurement_covariance(&obs, &subset).unwrap();
        let before = cross_correction(&l, &k, &r, &subset).unwrap();
        let mut outputs = l.surrogate.model_outputs().clone();
        outputs[(0, 1)] += 0.5;
        let degraded = crate::surrogate::Surrogate::from_document({
            let mut d = l.surrogate.to_document();
            d.model_outputs = outputs
                .transpose()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect();
            d
        })
        .unwrap();
        let l2 = CandidateModel::new("l", degraded, vec![1e-2]).unwrap();
        let after = cross_correction(&l2, &k, &r, &subset).unwrap();
        assert!(after.log_w1 < before.log_w1);
        assert_eq!(after.log_w2, before.log_w2);
    }

    #[test]
    fn exact_surrogates_keep_column_argmax() {
        let models = vec![
            exact("a", |p: &[f64]| vec![1.0 + p[0], 1.0 - p[1]], 2),
            exact("b", |p: &[f64]| vec![1.2 + 0.2 * p[0], 0.8], 2),
            exact("c", |p: &[f64]| vec![2.0 * p[0] * p[1], 1.0 + p[1] * p[1]], 2),
        ];
        let obs = ObservationSet::with_relative_error(grid(2), vec![1.3, 0.7], 0.2).unwrap();
        let subset = DataSubset::full(obs.grid());
        let settings = ConfusionSettings {
            n_mc: 400,
            seed: 8,
            include_measurement: true,
        };
        let cm = confusion_matrix(&models, &space(), &obs, &subset, &settings).unwrap();
        assert_eq!(cm.column_argmax(false), cm.column_argmax(true));
    }

    #[test]
    fn rmse_examples() {
        let obs = ObservationSet::with_relative_error(grid(4), vec![1.0, 2.0, 3.0, 4.0], 0.2).unwrap();
        let same = DMatrix::from_fn(4, 3, |r, _| obs.values()[r]);
        let shifted = DMatrix::from_fn(4, 1, |r, _| obs.values()[r] + 0.5);
        let t = rmse_table(&[("same".into(), &same), ("shift".into(), &shifted)], &obs).unwrap();
        assert_eq!(t.rows[0].rmse, vec![0.0]);
        assert!((t.rows[1].rmse[0] - 0.5 * 2.0).abs() < 1e-15);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn columns_are_stochastic(seed in 0u64..1000, offset in -1.0f64..1.0, md in proptest::bool::ANY) {
            let models = vec![
                exact("a", move |p: &[f64]| vec![1.0 + offset * p[0], 2.0 + p[1]], 2),
                exact("b", |p: &[f64]| vec![1.5 * p[1] + 0.2, 2.5 - p[0]], 2),
            ];
            let obs = ObservationSet::with_relative_error(grid(2), vec![1.2, 2.1], 0.2).unwrap();
            let subset = DataSubset::full(obs.grid());
            let settings = ConfusionSettings { n_mc: 64, seed, include_measurement: md };
            let cm = confusion_matrix(&models, &space(), &obs, &subset, &settings).unwrap();
            for s in cm.column_sums(false).into_iter().chain(cm.column_sums(true)) {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            for row in cm.raw.iter().chain(&cm.corrected) {
                for v in row {
                    prop_assert!((0.0..=1.0).contains(v));
                }
            }
        }
    }
}
