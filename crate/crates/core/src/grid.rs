use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on bin spacing uniformity.
pub const SPACING_RTOL: f64 = 1e-9;

/// Bin-center delay values on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct DelayGrid {
    tau: Vec<f64>,
    bin_width: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    tau: Vec<f64>,
    bin_width: f64,
}

impl TryFrom<RawGrid> for DelayGrid {
    type Error = Error;
    fn try_from(raw: RawGrid) -> Result<Self> {
        DelayGrid::with_bin_width(raw.tau, raw.bin_width)
    }
}

impl From<DelayGrid> for RawGrid {
    fn from(g: DelayGrid) -> Self {
        RawGrid {
            tau: g.tau,
            bin_width: g.bin_width,
        }
    }
}

impl DelayGrid {
    /// Builds a grid from at least two bin centers, inferring the bin width.
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.len() < 2 {
            return Err(Error::Grid(
                "bin width cannot be inferred from fewer than two points".into(),
            ));
        }
        let width = (tau[tau.len() - 1] - tau[0]) / (tau.len() - 1) as f64;
        Self::with_bin_width(tau, width)
    }

    pub fn with_bin_width(tau: Vec<f64>, bin_width: f64) -> Result<Self> {
        if tau.is_empty() {
            return Err(Error::Grid("grid is empty".into()));
        }
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::Grid(format!("bin width {bin_width} must be positive")));
        }
        if let Some(i) = tau.iter().position(|t| !t.is_finite()) {
            return Err(Error::Grid(format!("tau[{i}] is not finite")));
        }
        if let Some(i) = check_spacing(&tau, bin_width) {
            return Err(Error::Grid(format!(
                "spacing between tau[{}] = {} and tau[{}] = {} differs from bin width {}",
                i - 1,
                tau[i - 1],
                i,
                tau[i],
                bin_width
            )));
        }
        Ok(Self { tau, bin_width })
    }

    /// `bins` centers starting at `start`, spaced by `bin_width`.
    pub fn uniform(start: f64, bin_width: f64, bins: usize) -> Result<Self> {
        let tau = (0..bins).map(|i| start + i as f64 * bin_width).collect();
        Self::with_bin_width(tau, bin_width)
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn max_abs_tau(&self) -> f64 {
        self.tau.iter().fold(0.0_f64, |m, t| m.max(t.abs()))
    }
}

/// Index of the first point whose spacing from its predecessor is off,
/// if any. Also rejects non-increasing sequences.
pub(crate) fn check_spacing(tau: &[f64], bin_width: f64) -> Option<usize> {
    (1..tau.len()).find(|&i| {
        let d = tau[i] - tau[i - 1];
        !(d > 0.0) || (d - bin_width).abs() > SPACING_RTOL * bin_width
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infers_width() {
        let g = DelayGrid::new(vec![-1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(g.bin_width(), 1.0);
        assert_eq!(g.max_abs_tau(), 2.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(DelayGrid::new(vec![]).is_err());
        assert!(DelayGrid::new(vec![0.0]).is_err());
        assert!(DelayGrid::new(vec![0.0, 1.0, 3.0]).is_err());
        assert!(DelayGrid::new(vec![1.0, 0.0]).is_err());
        assert!(DelayGrid::with_bin_width(vec![0.0], 0.0).is_err());
        assert!(DelayGrid::with_bin_width(vec![0.0], 1.0).is_ok());
    }

    #[test]
    fn decimal_grid_is_uniform() {
        let tau: Vec<f64> = (0..200).map(|i| format!("{:.1}", -10.0 + 0.1 * i as f64).parse().unwrap()).collect();
        assert!(DelayGrid::new(tau).is_ok());
    }
}
