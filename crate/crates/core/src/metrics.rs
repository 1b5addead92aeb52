//! Reconstruction-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub max_abs: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nrmse: f64,
    pub total_photons: u64,
    pub photons_per_bin: f64,
    pub residual_summary: ResidualSummary,
}

fn aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!("{} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Alignment("empty curves".into()));
    }
    Ok(())
}

/// Root-mean-square error normalized by the range of the reference curve.
pub fn nrmse(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    aligned(estimate, reference)?;
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::UndefinedNormalization);
    }
    let mse = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - r).powi(2))
        .sum::<f64>()
        / estimate.len() as f64;
    Ok(mse.sqrt() / range)
}

/// Summary of `observed - expected`.
pub fn residual_summary(observed: &[f64], expected: &[f64]) -> Result<ResidualSummary> {
    aligned(observed, expected)?;
    let r: Vec<f64> = observed.iter().zip(expected).map(|(o, e)| o - e).collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let variance = if r.len() > 1 {
        r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ResidualSummary {
        max_abs: r.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        mean,
        variance,
    })
}

/// Metrics of an estimated curve against a reference, with the photon
/// budget of the histogram the estimate came from.
pub fn metrics_report(estimate: &[f64], reference: &[f64], total_photons: u64) -> Result<MetricsReport> {
    Ok(MetricsReport {
        nrmse: nrmse(estimate, reference)?,
        total_photons,
        photons_per_bin: total_photons as f64 / estimate.len() as f64,
        residual_summary: residual_summary(estimate, reference)?,
    })
}

/// Median of finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
