//! Analytical stand-ins for the three column-experiment simulators.
//!
//! All three share one response structure. Parameters are first put on unit
//! scales:
//!
//! ```text
//! u1 = c_a1 / 1e-7    u2 = c_a2 / 1e-6    r = rho_f / 8    q = k_ub / 2.55e-4
//! ```
//!
//! An "activity" `act` and a depth scale `L` (cm) then drive both quantities:
//!
//! ```text
//! calcite(z)    = 6 e / (1 + 0.4 e),  e = act * exp(-z / L)           [%]
//! calcium(z, t) = 333 exp(-kappa (z / 25 + s)),
//!                 kappa = 0.03 act (1 + 0.08 k)                       [mol/m^3]
//! ```
//!
//! where `k` is the index of the latest calcium pulse at or before `t` and `s`
//! the hours elapsed since it. The models differ only in `act` and `L`:
//!
//! | model | parameters             | act                                           | L               |
//! |-------|------------------------|-----------------------------------------------|-----------------|
//! | FC    | c_a1, c_a2, rho_f, k_ub | q r (1 + 0.35 a), a = u1 + u2                 | 40 (1 + 0.2 a)  |
//! | IB    | rho_f, k_ub            | q r                                           | 40              |
//! | SC    | c_a1, c_a2, rho_f, k_ub | 1 + 0.08 (q - 1) + 0.06 (r - 1) + 0.03 (a - 1) | 40              |
//!
//! IB is FC with the attachment terms switched off, so the two agree closely
//! when both attachment coefficients sit at the low end of their ranges. SC
//! responds only weakly to its parameters and so has a narrow predictive
//! spread.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::OutputGrid;

pub const CALCITE: &str = "calcite_content";
pub const CALCIUM: &str = "calcium_concentration";

/// Calcium injection times in hours.
pub const PULSE_TIMES: [f64; 6] = [151.35, 218.85, 290.85, 626.85, 698.85, 866.85];

/// Calcium measurement times in hours: each pulse plus 0.5, 1, 2, 3 and 4 hours,
/// except the fourth pulse which has no 3-hour sample.
pub fn calcium_times() -> Vec<f64> {
    let mut out = Vec::with_capacity(35);
    for (k, p) in PULSE_TIMES.iter().enumerate() {
        for off in [0.0, 0.5, 1.0, 2.0, 3.0, 4.0] {
            if k == 3 && off == 3.0 {
                continue;
            }
            out.push(((p + off) * 100.0).round() / 100.0);
        }
    }
    out
}

pub const CALCITE_POSITIONS: [f64; 8] = [3.81, 11.43, 19.05, 26.67, 34.29, 41.91, 49.53, 57.15];
pub const CALCIUM_POSITIONS: [f64; 5] = [10.16, 20.32, 30.48, 39.37, 49.53];
pub const CALCITE_TIME: f64 = 890.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyModel {
    #[serde(rename = "toy-fc")]
    FullComplexity,
    #[serde(rename = "toy-ib")]
    InitialBiofilm,
    #[serde(rename = "toy-sc")]
    SimpleChemistry,
}

impl ToyModel {
    pub fn name(self) -> &'static str {
        match self {
            ToyModel::FullComplexity => "toy-fc",
            ToyModel::InitialBiofilm => "toy-ib",
            ToyModel::SimpleChemistry => "toy-sc",
        }
    }

    /// Parameter roles, in the order the model consumes them.
    pub fn parameter_roles(self) -> &'static [&'static str] {
        match self {
            ToyModel::InitialBiofilm => &["rho_f", "k_ub"],
            _ => &["c_a1", "c_a2", "rho_f", "k_ub"],
        }
    }

    /// Checks that every coordinate has a known quantity and numeric labels.
    pub fn check_grid(self, grid: &OutputGrid) -> Result<()> {
        for c in grid.coords() {
            parse_coordinate(&c.quantity, &c.space, &c.time)?;
        }
        Ok(())
    }

    pub fn evaluate(self, params: &[f64], grid: &OutputGrid) -> Result<Vec<f64>> {
        let n = self.parameter_roles().len();
        if params.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} takes {n} parameters, got {}",
                self.name(),
                params.len()
            )));
        }
        let (act, length) = self.drivers(params);
        grid.coords()
            .iter()
            .map(|c| {
                let (quantity, z, t) = parse_coordinate(&c.quantity, &c.space, &c.time)?;
                Ok(match quantity {
                    Quantity::Calcite => calcite(act, length, z),
                    Quantity::Calcium => calcium(act, z, t),
                })
            })
            .collect()
    }

    fn drivers(self, params: &[f64]) -> (f64, f64) {
        match self {
            ToyModel::FullComplexity => {
                let a = params[0] / 1e-7 + params[1] / 1e-6;
                let (r, q) = (params[2] / 8.0, params[3] / 2.55e-4);
                (q * r * (1.0 + 0.35 * a), 40.0 * (1.0 + 0.2 * a))
            }
            ToyModel::InitialBiofilm => {
                let (r, q) = (params[0] / 8.0, params[1] / 2.55e-4);
                (q * r, 40.0)
            }
            ToyModel::SimpleChemistry => {
                let a = params[0] / 1e-7 + params[1] / 1e-6;
                let (r, q) = (params[2] / 8.0, params[3] / 2.55e-4);
                (1.0 + 0.08 * (q - 1.0) + 0.06 * (r - 1.0) + 0.03 * (a - 1.0), 40.0)
            }
        }
    }
}

enum Quantity {
    Calcite,
    Calcium,
}

fn parse_coordinate(quantity: &str, space: &str, time: &str) -> Result<(Quantity, f64, f64)> {
    let q = match quantity {
        CALCITE => Quantity::Calcite,
        CALCIUM => Quantity::Calcium,
        other => {
            return Err(Error::InvalidArgument(format!(
                "toy models produce '{CALCITE}' and '{CALCIUM}', not '{other}'"
            )))
        }
    };
    let num = |label: &str, what: &str| {
        label
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("toy models need a numeric {what} label, got '{label}'")))
    };
    Ok((q, num(space, "space")?, num(time, "time")?))
}

fn calcite(act: f64, length: f64, z: f64) -> f64 {
    let e = act * (-z / length).exp();
    6.0 * e / (1.0 + 0.4 * e)
}

fn calcium(act: f64, z: f64, t: f64) -> f64 {
    let k = PULSE_TIMES.iter().rposition(|&p| p <= t + 1e-9).unwrap_or(0);
    let s = (t - PULSE_TIMES[k]).max(0.0);
    let kappa = 0.03 * act * (1.0 + 0.08 * k as f64);
    333.0 * (-kappa * (z / 25.0 + s)).exp()
}

/// The full output grid of the column experiment: calcite at eight depths at
/// the end of the run, then calcium at five depths and 35 times.
pub fn column_grid() -> OutputGrid {
    use crate::surrogate::OutputCoordinate;
    let mut coords = Vec::new();
    for z in CALCITE_POSITIONS {
        coords.push(OutputCoordinate::new(
            format!("{z}"),
            format!("{CALCITE_TIME}"),
            CALCITE,
        ));
    }
    let times = calcium_times();
    for z in CALCIUM_POSITIONS {
        for t in &times {
            coords.push(OutputCoordinate::new(format!("{z}"), format!("{t}"), CALCIUM));
        }
    }
    OutputGrid::new(coords).expect("column grid labels are unique")
}
