//! Derivative-free local optimizers and the multi-start driver.
//!
//! Everything in here minimizes. Public objectives are maximized, so the
//! multi-start layer negates once on the way in and once on the way out.

mod brent;
mod lm;
mod multistart;
mod powell;

pub use brent::{bracket_minimum, brent_line_min, LineMin};
pub use lm::{levenberg_marquardt, LmOutcome};
pub use multistart::{
    draw_guesses, least_squares_from_guesses, maximize_from_guesses, multistart_least_squares, multistart_maximize, FitResult, GuessStrategy, MultiStartPlan,
    RestartRecord,
};
pub use powell::{powell_minimize, PowellOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Relative parameter tolerance.
    pub xtol: f64,
    /// Relative objective tolerance.
    pub ftol: f64,
    /// Outer iterations (Powell sweeps or LM steps).
    pub max_iters: usize,
    /// Function evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            xtol: 1e-6,
            ftol: 1e-8,
            max_iters: 200,
            max_line_evals: 100,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.xtol > 0.0 && self.ftol > 0.0 && self.max_iters >= 1 && self.max_line_evals >= 1) {
            return Err(Error::Config(format!("optimizer settings must be positive: {self:?}")));
        }
        Ok(())
    }
}
