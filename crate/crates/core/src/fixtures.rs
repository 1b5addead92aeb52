//! Synthetic ground-truth fixtures with published parameters.
//!
//! Parameters are given at unit scale; `time_scale_for_budget` picks the
//! integration-time factor that yields a requested expected photon count.

use crate::error::Result;
use crate::grid::DelayGrid;
use crate::io::ParamsFile;
use crate::models::{evaluate, ModelSpec, PulsedEmitterParams};

pub const PULSED_JSON: &str = include_str!("../fixtures/pulsed.json");
pub const THERMAL_JSON: &str = include_str!("../fixtures/thermal.json");

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub params: ParamsFile,
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
    pub grid: DelayGrid,
    pub curve: Vec<f64>,
}

impl Fixture {
    fn load(name: &'static str, json: &str) -> Result<Self> {
        let params: ParamsFile = serde_json::from_str(json)?;
        let grid = params.grid.build()?;
        let theta = params.theta()?;
        let spec = params.model.clone();
        let curve = evaluate(&spec, &theta, &grid)?;
        Ok(Self {
            name,
            params,
            spec,
            theta,
            grid,
            curve,
        })
    }

    /// `T` such that `sum_i T * y_i = budget`.
    pub fn time_scale_for_budget(&self, budget: f64) -> f64 {
        budget / self.curve.iter().sum::<f64>()
    }

    /// Ground truth of the scaled signal `T * y`.
    pub fn theta_at(&self, t: f64) -> Vec<f64> {
        self.spec.scale_amplitudes(&self.theta, t)
    }

    pub fn curve_at(&self, t: f64) -> Vec<f64> {
        self.curve.iter().map(|v| v * t).collect()
    }

    pub fn pulsed_params(&self) -> Result<PulsedEmitterParams> {
        self.spec.pulsed_params(&self.theta)
    }
}

/// Quantum-dot-like antibunched pulse train: 25 ns period, 2 ns lifetime,
/// center peak at 20 % of the side peaks, 256 bins of 1 ns.
pub fn pulsed() -> Fixture {
    Fixture::load("pulsed", PULSED_JSON).expect("bundled pulsed fixture is valid")
}

/// Thermal bunching peak: one Gaussian of width 12 ns on a unit background.
pub fn thermal() -> Fixture {
    Fixture::load("thermal", THERMAL_JSON).expect("bundled thermal fixture is valid")
}

pub fn by_name(name: &str) -> Option<Fixture> {
    match name {
        "pulsed" => Some(pulsed()),
        "thermal" => Some(thermal()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::center_peak_ratio;
    use crate::models::ModelVariant;

    #[test]
    fn fixtures_load() {
        let p = pulsed();
        assert_eq!(p.grid.len(), 256);
        let ModelVariant::PulsedEmitter(s) = p.spec.variant() else { panic!() };
        assert!(center_peak_ratio(&p.pulsed_params().unwrap(), s).unwrap() < 0.5);
        let t = p.time_scale_for_budget(500.0);
        assert!((p.curve_at(t).iter().sum::<f64>() - 500.0).abs() < 1e-9);
        let th = thermal();
        assert_eq!(th.theta, vec![1.0, 1.0, 12.0]);
    }
}
