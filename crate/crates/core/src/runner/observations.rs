//! Measurement data with per-coordinate Gaussian error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{DataSubset, OutputCoordinate, OutputGrid};

/// Measurement standard deviation as a fraction of the measured value, used
/// when no explicit `sigma` is given.
pub const DEFAULT_RELATIVE_ERROR: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    grid: OutputGrid,
    values: Vec<f64>,
    sigma: Vec<f64>,
}

impl ObservationSet {
    pub fn new(grid: OutputGrid, values: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || sigma.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} coordinates, {} values, {} standard deviations",
                grid.len(),
                values.len(),
                sigma.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("observation {i} is not finite")));
        }
        if let Some(i) = sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "observation {i} has non-positive standard deviation {}",
                sigma[i]
            )));
        }
        Ok(Self { grid, values, sigma })
    }

    /// Observations with the default relative error on every coordinate.
    pub fn with_relative_error(grid: OutputGrid, values: Vec<f64>, relative: f64) -> Result<Self> {
        let sigma = values.iter().map(|v| relative * v.abs()).collect();
        Self::new(grid, values, sigma)
    }

    pub fn grid(&self) -> &OutputGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Diagonal of the error covariance R.
    pub fn variances(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    pub fn subset_values(&self, subset: &DataSubset) -> Vec<f64> {
        subset.indices.iter().map(|&i| self.values[i]).collect()
    }

    pub fn subset_variances(&self, subset: &DataSubset) -> Vec<f64> {
        subset.indices.iter().map(|&i| self.sigma[i] * self.sigma[i]).collect()
    }

    /// Concatenates observation sets; coordinates must not overlap.
    pub fn merge(sets: &[ObservationSet]) -> Result<Self> {
        let mut coords = Vec::new();
        let mut values = Vec::new();
        let mut sigma = Vec::new();
        for s in sets {
            coords.extend(s.grid.coords().iter().cloned());
            values.extend_from_slice(&s.values);
            sigma.extend_from_slice(&s.sigma);
        }
        Self::new(OutputGrid::new(coords)?, values, sigma)
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    quantity: String,
    space: String,
    time: String,
    value: String,
    #[serde(default)]
    sigma: Option<String>,
}

/// Reads `quantity,space,time,value[,sigma]` CSV. A blank or missing `sigma`
/// falls back to [`DEFAULT_RELATIVE_ERROR`] times the value.
pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(format!("{other:?}")),
        })?;
    let mut coords = Vec::new();
    let mut values = Vec::new();
    let mut sigma = Vec::new();
    for (n, row) in reader.deserialize::<Row>().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| parse_err(format!("line {line}: {e}")))?;
        let value: f64 = row
            .value
            .parse()
            .map_err(|_| parse_err(format!("line {line}: value '{}' is not a number", row.value)))?;
        if !value.is_finite() {
            return Err(parse_err(format!("line {line}: value is not finite")));
        }
        let s = match row.sigma.as_deref() {
            Some(text) if !text.is_empty() => text
                .parse::<f64>()
                .map_err(|_| parse_err(format!("line {line}: sigma '{text}' is not a number")))?,
            _ => {
                if value == 0.0 {
                    return Err(parse_err(format!(
                        "line {line}: zero measurement needs an explicit sigma"
                    )));
                }
                DEFAULT_RELATIVE_ERROR * value.abs()
            }
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(parse_err(format!("line {line}: sigma must be positive")));
        }
        coords.push(OutputCoordinate::new(row.space, row.time, row.quantity));
        values.push(value);
        sigma.push(s);
    }
    if values.is_empty() {
        return Err(parse_err("no observations".into()));
    }
    let grid = OutputGrid::new(coords).map_err(|e| parse_err(e.to_string()))?;
    ObservationSet::new(grid, values, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn default_sigma_is_twenty_percent() {
        let f = write("quantity,space,time,value\ncc,1,890,5.0\ncc,2,890,-2.5\n");
        let obs = read_observations(f.path()).unwrap();
        assert_eq!(obs.sigma(), &[1.0, 0.5]);
        assert_eq!(obs.variances(), vec![1.0, 0.25]);
    }

    #[test]
    fn explicit_sigma_overrides() {
        let f = write("quantity,space,time,value,sigma\ncc,1,890,5.0,0.1\ncc,2,890,4.0,\n");
        let obs = read_observations(f.path()).unwrap();
        assert_eq!(obs.sigma()[0], 0.1);
        assert!((obs.sigma()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(read_observations(write("").path()).is_err());
        assert!(read_observations(write("quantity,space,time,value\n").path()).is_err());
        let f = write("quantity,space,time,value\ncc,1,890,abc\n");
        assert!(matches!(read_observations(f.path()), Err(Error::Parse { .. })));
        let f = write("quantity,space,time,value\ncc,1,890,0\n");
        let err = read_observations(f.path()).unwrap_err().to_string();
        assert!(err.contains("explicit sigma"), "{err}");
        let f = write("quantity,space,time,value\ncc,1,890,1\ncc,1,890,2\n");
        assert!(read_observations(f.path()).is_err());
        assert!(read_observations(Path::new("/nonexistent/obs.csv")).is_err());
    }

    #[test]
    fn merge_keeps_order() {
        let a = read_observations(write("quantity,space,time,value\na,1,1,1\n").path()).unwrap();
        let b = read_observations(write("quantity,space,time,value\nb,1,1,2\n").path()).unwrap();
        let m = ObservationSet::merge(&[a.clone(), b]).unwrap();
        assert_eq!(m.values(), &[1.0, 2.0]);
        assert!(ObservationSet::merge(&[a.clone(), a]).is_err());
    }
}
