//! Independent priors over model parameters.
//!
//! A [`ParameterSpace`] is an ordered list of named one-dimensional priors.
//! The joint density is the product of the marginals. Priors expose raw
//! moments, which is all the polynomial basis construction needs, plus
//! standardized moments used internally for numerically stable Hankel solves.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The shape of a one-dimensional prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorKind {
    Uniform {
        lower: f64,
        upper: f64,
    },
    /// Data-driven prior given by a set of samples. Moments are plain
    /// empirical moments; the density is a histogram over the sample range.
    SampleSet {
        samples: Vec<f64>,
    },
}

/// One-dimensional prior with an opaque physical-unit label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior1D {
    #[serde(flatten)]
    kind: PriorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit: Option<String>,
}

impl Prior1D {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidPrior(format!(
                "uniform bounds must be finite, got [{lower}, {upper}]"
            )));
        }
        if lower >= upper {
            return Err(Error::InvalidPrior(format!(
                "uniform prior needs lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            kind: PriorKind::Uniform { lower, upper },
            unit: None,
        })
    }

    /// Data-driven prior. At least two finite, not all identical, samples are
    /// required; whether enough samples exist for a given basis degree is
    /// checked when moments are requested.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidPrior(format!(
                "sample-set prior needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidPrior(
                "sample-set prior contains non-finite values".into(),
            ));
        }
        let (lo, hi) = min_max(&samples);
        if lo >= hi {
            return Err(Error::InvalidPrior("sample-set prior has zero spread".into()));
        }
        Ok(Self {
            kind: PriorKind::SampleSet { samples },
            unit: None,
        })
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }

    pub fn kind(&self) -> &PriorKind {
        &self.kind
    }

    pub fn unit(&self) -> Option<&str> {
        self.unit.as_deref()
    }

    /// Support bounds `[lower, upper]`.
    pub fn bounds(&self) -> (f64, f64) {
        match &self.kind {
            PriorKind::Uniform { lower, upper } => (*lower, *upper),
            PriorKind::SampleSet { samples } => min_max(samples),
        }
    }

    /// Highest raw-moment order that can be estimated, `None` when unbounded.
    pub fn max_moment_order(&self) -> Option<usize> {
        match &self.kind {
            PriorKind::Uniform { .. } => None,
            PriorKind::SampleSet { samples } => Some(samples.len() - 2),
        }
    }

    fn check_order(&self, order: usize) -> Result<()> {
        if let (Some(max), PriorKind::SampleSet { samples }) = (self.max_moment_order(), &self.kind) {
            if order > max {
                return Err(Error::MomentOrder {
                    order,
                    samples: samples.len(),
                    max,
                });
            }
        }
        Ok(())
    }

    /// Raw moment `E[x^k]`.
    pub fn raw_moment(&self, order: usize) -> Result<f64> {
        self.check_order(order)?;
        if order == 0 {
            return Ok(1.0);
        }
        Ok(match &self.kind {
            PriorKind::Uniform { lower, upper } => uniform_moment(*lower, *upper, order),
            PriorKind::SampleSet { samples } => {
                samples.iter().map(|s| s.powi(order as i32)).sum::<f64>() / samples.len() as f64
            }
        })
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            PriorKind::Uniform { lower, upper } => 0.5 * (lower + upper),
            PriorKind::SampleSet { samples } => samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        match &self.kind {
            PriorKind::Uniform { lower, upper } => (upper - lower) / 12f64.sqrt(),
            PriorKind::SampleSet { samples } => {
                let m = self.mean();
                (samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / samples.len() as f64).sqrt()
            }
        }
    }

    /// Raw moment of the standardized variable `z = (x - mean) / std_dev`.
    ///
    /// Computed directly rather than through the binomial expansion of raw
    /// moments, which cancels catastrophically for narrow priors far from zero.
    pub fn standardized_moment(&self, order: usize) -> Result<f64> {
        self.check_order(order)?;
        if order == 0 {
            return Ok(1.0);
        }
        let (mean, sd) = (self.mean(), self.std_dev());
        Ok(match &self.kind {
            PriorKind::Uniform { lower, upper } => uniform_moment((lower - mean) / sd, (upper - mean) / sd, order),
            PriorKind::SampleSet { samples } => {
                samples
                    .iter()
                    .map(|s| ((s - mean) / sd).powi(order as i32))
                    .sum::<f64>()
                    / samples.len() as f64
            }
        })
    }

    /// Marginal density; zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if !(lo..=hi).contains(&x) {
            return 0.0;
        }
        match &self.kind {
            PriorKind::Uniform { lower, upper } => 1.0 / (upper - lower),
            PriorKind::SampleSet { samples } => {
                let bins = histogram_bins(samples.len());
                let width = (hi - lo) / bins as f64;
                let bin = (((x - lo) / width) as usize).min(bins - 1);
                let count = samples
                    .iter()
                    .filter(|&&s| {
                        let b = (((s - lo) / width) as usize).min(bins - 1);
                        b == bin
                    })
                    .count();
                count as f64 / (samples.len() as f64 * width)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            PriorKind::Uniform { lower, upper } => lower + (upper - lower) * rng.random::<f64>(),
            PriorKind::SampleSet { samples } => samples[rng.random_range(0..samples.len())],
        }
    }
}

fn uniform_moment(a: f64, b: f64, k: usize) -> f64 {
    let p = k as i32 + 1;
    (b.powi(p) - a.powi(p)) / ((k as f64 + 1.0) * (b - a))
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn histogram_bins(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

/// Ordered, named, independent priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    names: Vec<String>,
    priors: Vec<Prior1D>,
}

impl ParameterSpace {
    pub fn new(parameters: Vec<(String, Prior1D)>) -> Result<Self> {
        if parameters.is_empty() {
            return Err(Error::InvalidArgument(
                "parameter space needs at least one parameter".into(),
            ));
        }
        let mut names = Vec::with_capacity(parameters.len());
        let mut priors = Vec::with_capacity(parameters.len());
        for (name, prior) in parameters {
            if names.contains(&name) {
                return Err(Error::InvalidArgument(format!("duplicate parameter name '{name}'")));
            }
            names.push(name);
            priors.push(prior);
        }
        Ok(Self { names, priors })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn priors(&self) -> &[Prior1D] {
        &self.priors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws an `n × N_p` matrix of prior realizations, one row per draw.
    /// Deterministic for a fixed seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, self.len());
        for row in 0..n {
            for (col, prior) in self.priors.iter().enumerate() {
                out[(row, col)] = prior.sample(&mut rng);
            }
        }
        Ok(out)
    }

    /// Joint density (product of marginals).
    pub fn density(&self, point: &[f64]) -> Result<f64> {
        self.check_len(point)?;
        Ok(self.priors.iter().zip(point).map(|(p, &x)| p.density(x)).product())
    }

    pub fn log_density(&self, point: &[f64]) -> Result<f64> {
        self.check_len(point)?;
        Ok(self.priors.iter().zip(point).map(|(p, &x)| p.density(x).ln()).sum())
    }

    pub fn means(&self) -> Vec<f64> {
        self.priors.iter().map(Prior1D::mean).collect()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.priors.iter().map(Prior1D::std_dev).collect()
    }

    fn check_len(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.len() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, parameter space has {}",
                point.len(),
                self.len()
            )));
        }
        Ok(())
    }
}
