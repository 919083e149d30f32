//! Polynomial chaos surrogates: coefficient solve, evaluation and
//! leave-one-out cross validation.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{CollocationSet, MultivariateBasis, Provenance, UnivariateFamily};
use crate::error::{Error, Result};

/// One output coordinate: a (space, time, quantity) label triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutputCoordinate {
    pub space: String,
    pub time: String,
    pub quantity: String,
}

impl OutputCoordinate {
    pub fn new(space: impl Into<String>, time: impl Into<String>, quantity: impl Into<String>) -> Self {
        Self {
            space: space.into(),
            time: time.into(),
            quantity: quantity.into(),
        }
    }
}

/// Ordered output coordinates shared by models, surrogates and observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputGrid {
    coords: Vec<OutputCoordinate>,
}

impl OutputGrid {
    pub fn new(coords: Vec<OutputCoordinate>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(coords.len());
        for c in &coords {
            if !seen.insert(c) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate output coordinate ({}, {}, {})",
                    c.space, c.time, c.quantity
                )));
            }
        }
        Ok(Self { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[OutputCoordinate] {
        &self.coords
    }

    /// Distinct quantity labels in order of first appearance.
    pub fn quantities(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.coords {
            if !out.contains(&c.quantity) {
                out.push(c.quantity.clone());
            }
        }
        out
    }

    pub fn indices_of(&self, quantity: &str) -> Vec<usize> {
        self.coords
            .iter()
            .enumerate()
            .filter(|(_, c)| c.quantity == quantity)
            .map(|(i, _)| i)
            .collect()
    }

    /// Distinct space labels of one quantity, in order of first appearance.
    pub fn spatial_labels(&self, quantity: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.coords.iter().filter(|c| c.quantity == quantity) {
            if !out.contains(&c.space) {
                out.push(c.space.clone());
            }
        }
        out
    }

    /// Concatenation of two grids; fails on overlapping coordinates.
    pub fn concat(&self, other: &OutputGrid) -> Result<OutputGrid> {
        let mut coords = self.coords.clone();
        coords.extend(other.coords.iter().cloned());
        OutputGrid::new(coords)
    }
}

/// Coordinates of one quantity at the first `spatial_points` space labels
/// (in declared order), all times included. Subsets of increasing size are
/// nested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSubset {
    pub quantity: String,
    pub spatial_points: usize,
    pub indices: Vec<usize>,
}

impl DataSubset {
    pub fn new(grid: &OutputGrid, quantity: &str, spatial_points: usize) -> Result<Self> {
        let labels = grid.spatial_labels(quantity);
        if labels.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "quantity '{quantity}' does not appear in the output grid"
            )));
        }
        if spatial_points == 0 || spatial_points > labels.len() {
            return Err(Error::InvalidArgument(format!(
                "subset of {spatial_points} spatial points requested for '{quantity}', \
                 which has {}",
                labels.len()
            )));
        }
        let keep = &labels[..spatial_points];
        let indices = grid
            .coords()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.quantity == quantity && keep.contains(&c.space))
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            quantity: quantity.to_string(),
            spatial_points,
            indices,
        })
    }

    /// Every coordinate of the grid.
    pub fn full(grid: &OutputGrid) -> Self {
        Self {
            quantity: "*".into(),
            spatial_points: 0,
            indices: (0..grid.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn label(&self) -> String {
        format!("{}_n{}", self.quantity, self.spatial_points)
    }
}

/// Polynomial chaos expansion of every output coordinate over one basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    basis: MultivariateBasis,
    /// `N_out × (D+1)`.
    coefficients: DMatrix<f64>,
    collocation: CollocationSet,
    /// Original-model outputs, `N_out × P`.
    model_outputs: DMatrix<f64>,
}

/// Fits the expansion coefficients.
///
/// With `P = D+1` points this solves the square collocation system; with more
/// points it is the least-squares solution of the normal equations, computed
/// through a QR factorization of the shared design matrix.
pub fn solve_coefficients(
    basis: &MultivariateBasis,
    collocation: &CollocationSet,
    model_outputs: &DMatrix<f64>,
) -> Result<Surrogate> {
    let p = collocation.len();
    if p < basis.len() {
        return Err(Error::InvalidArgument(format!(
            "{} collocation points cannot determine {} coefficients",
            p,
            basis.len()
        )));
    }
    if model_outputs.ncols() != p {
        return Err(Error::Shape(format!(
            "model outputs have {} columns for {} collocation points",
            model_outputs.ncols(),
            p
        )));
    }
    if model_outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("model outputs contain non-finite values".into()));
    }
    let design = basis.design_matrix(&collocation.to_matrix());
    let coeffs_t = least_squares(&design, &model_outputs.transpose()).map_err(|_| rank_error(collocation))?;
    let coefficients = coeffs_t.transpose();
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite expansion coefficients".into()));
    }
    Ok(Surrogate {
        basis: basis.clone(),
        coefficients,
        collocation: collocation.clone(),
        model_outputs: model_outputs.clone(),
    })
}

struct RankDeficient;

/// Least-squares solution of `design · X = rhs` via Householder QR.
fn least_squares(design: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, RankDeficient> {
    let n = design.ncols();
    let qr = design.clone().qr();
    let r = qr.r();
    let max_diag = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..n).any(|i| r[(i, i)].abs() <= 1e-10 * max_diag) {
        return Err(RankDeficient);
    }
    let qt_b = qr.q().transpose() * rhs;
    r.solve_upper_triangular(&qt_b).ok_or(RankDeficient)
}

fn rank_error(collocation: &CollocationSet) -> Error {
    let pts = collocation.points();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(a, b)| {
                    let s = a.abs().max(b.abs());
                    if s == 0.0 {
                        0.0
                    } else {
                        ((a - b) / s).powi(2)
                    }
                })
                .sum::<f64>()
                .sqrt();
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let listed: Vec<String> = pairs
        .iter()
        .take(3)
        .map(|(d, i, j)| format!("#{i} {:?} ~ #{j} {:?} (rel. distance {d:.3e})", pts[*i], pts[*j]))
        .collect();
    Error::RankDeficient {
        pairs: listed.join("; "),
    }
}

impl Surrogate {
    pub fn basis(&self) -> &MultivariateBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn collocation(&self) -> &CollocationSet {
        &self.collocation
    }

    pub fn model_outputs(&self) -> &DMatrix<f64> {
        &self.model_outputs
    }

    pub fn n_outputs(&self) -> usize {
        self.coefficients.nrows()
    }

    /// Same basis and collocation with replaced coefficients.
    pub fn with_coefficients(&self, coefficients: DMatrix<f64>) -> Result<Self> {
        if coefficients.shape() != self.coefficients.shape() {
            return Err(Error::Shape("coefficient matrix shape changed".into()));
        }
        Ok(Self {
            coefficients,
            ..self.clone()
        })
    }

    /// Evaluates every output at each row of `points`; returns `n × N_out`.
    pub fn evaluate(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        self.basis.design_matrix(points) * self.coefficients.transpose()
    }

    /// Evaluates only the output coordinates in `outputs`; returns
    /// `n × outputs.len()`.
    pub fn evaluate_subset(&self, points: &DMatrix<f64>, outputs: &[usize]) -> DMatrix<f64> {
        let coeffs = self.coefficients.select_rows(outputs);
        self.basis.design_matrix(points) * coeffs.transpose()
    }

    pub fn evaluate_point(&self, point: &[f64]) -> Vec<f64> {
        let row = self.basis.evaluate_row(point);
        (0..self.n_outputs())
            .map(|o| self.coefficients.row(o).iter().zip(&row).map(|(c, v)| c * v).sum())
            .collect()
    }

    pub fn to_document(&self) -> SurrogateDocument {
        SurrogateDocument {
            format_version: 1,
            parameter_names: self.basis.names().to_vec(),
            degree: self.basis.degree(),
            families: self.basis.families().to_vec(),
            multi_indices: self.basis.indices().to_vec(),
            coefficients: rows_of(&self.coefficients),
            collocation_points: self.collocation.points().to_vec(),
            collocation_provenance: self.collocation.provenance().to_vec(),
            model_outputs: rows_of(&self.model_outputs.transpose()),
        }
    }

    pub fn from_document(doc: SurrogateDocument) -> Result<Self> {
        let basis = MultivariateBasis::from_parts(doc.parameter_names, doc.families, doc.multi_indices, doc.degree)?;
        let collocation = CollocationSet::from_points(doc.collocation_points, doc.collocation_provenance)?;
        let coefficients = matrix_from_rows(&doc.coefficients, basis.len())?;
        let n_out = coefficients.nrows();
        let outputs_t = matrix_from_rows(&doc.model_outputs, n_out)?;
        if outputs_t.nrows() != collocation.len() {
            return Err(Error::Shape("cached outputs do not match collocation points".into()));
        }
        Ok(Self {
            basis,
            coefficients,
            collocation,
            model_outputs: outputs_t.transpose(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// Serialized form of a [`Surrogate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDocument {
    pub format_version: u32,
    pub parameter_names: Vec<String>,
    pub degree: usize,
    pub families: Vec<UnivariateFamily>,
    pub multi_indices: Vec<Vec<usize>>,
    /// One row per output coordinate.
    pub coefficients: Vec<Vec<f64>>,
    pub collocation_points: Vec<Vec<f64>>,
    pub collocation_provenance: Vec<Provenance>,
    /// One row per collocation point.
    pub model_outputs: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape(format!("expected rows of length {ncols}")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Leave-one-out cross-validation errors of a surrogate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoocvReport {
    /// Squared fold residuals, `fold_squared_errors[i][c]` for omitted point `i`.
    pub fold_squared_errors: Vec<Vec<f64>>,
    /// Mean over folds per output coordinate.
    pub mse: Vec<f64>,
    /// Average of `mse` over coordinates.
    pub mean_mse: f64,
    /// `sqrt(mse) / |mean model output|` per coordinate.
    pub relative: Vec<f64>,
    /// Coordinates whose mean output is zero; `relative` holds the absolute
    /// root error there.
    pub absolute_fallback: Vec<bool>,
}

impl LoocvReport {
    /// Mean relative error over the given coordinates.
    pub fn mean_relative(&self, outputs: &[usize]) -> f64 {
        if outputs.is_empty() {
            return f64::NAN;
        }
        outputs.iter().map(|&i| self.relative[i]).sum::<f64>() / outputs.len() as f64
    }
}

/// LOOCV by explicit refits: each collocation point is omitted in turn, the
/// coefficients are refit on the rest, and the squared prediction error at the
/// omitted point is recorded.
pub fn loocv_error(
    basis: &MultivariateBasis,
    collocation: &CollocationSet,
    model_outputs: &DMatrix<f64>,
) -> Result<LoocvReport> {
    let p = collocation.len();
    if p < basis.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "LOOCV needs at least {} collocation points, have {p}",
            basis.len() + 1
        )));
    }
    if model_outputs.ncols() != p {
        return Err(Error::Shape(format!(
            "model outputs have {} columns for {p} collocation points",
            model_outputs.ncols()
        )));
    }
    let n_out = model_outputs.nrows();
    let design = basis.design_matrix(&collocation.to_matrix());
    let rhs = model_outputs.transpose();

    let mut folds = Vec::with_capacity(p);
    for i in 0..p {
        let d = design.clone().remove_row(i);
        let y = rhs.clone().remove_row(i);
        let coeffs = least_squares(&d, &y).map_err(|_| rank_error(&collocation.without(i)))?;
        let pred = design.row(i) * &coeffs;
        folds.push(
            (0..n_out)
                .map(|c| (rhs[(i, c)] - pred[c]).powi(2))
                .collect::<Vec<f64>>(),
        );
    }

    let mse: Vec<f64> = (0..n_out)
        .map(|c| folds.iter().map(|f| f[c]).sum::<f64>() / p as f64)
        .collect();
    let mean_mse = if n_out == 0 {
        0.0
    } else {
        mse.iter().sum::<f64>() / n_out as f64
    };
    let mut relative = Vec::with_capacity(n_out);
    let mut absolute_fallback = Vec::with_capacity(n_out);
    for (c, m) in mse.iter().enumerate() {
        let mean_out = model_outputs.row(c).iter().sum::<f64>() / p as f64;
        if mean_out == 0.0 {
            relative.push(m.sqrt());
            absolute_fallback.push(true);
        } else {
            relative.push(m.sqrt() / mean_out.abs());
            absolute_fallback.push(false);
        }
    }
    Ok(LoocvReport {
        fold_squared_errors: folds,
        mse,
        mean_mse,
        relative,
        absolute_fallback,
    })
}
