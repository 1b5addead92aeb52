//! Poisson forward model: scale a noiseless curve by an integration-time
//! factor and draw independent per-bin counts.
//!
//! Counts come from a fixed algorithm (sequential inversion below a rate
//! of 30, Hörmann's PTRD transformed rejection above) driven by ChaCha8, so
//! a seed always produces the same histogram.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DelayGrid;
use crate::models::{evaluate, ModelSpec};
use crate::objective::Histogram;

/// Rates at or above this use PTRD instead of inversion.
pub const PTRD_CUTOFF: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Dimensionless integration-time multiplier `T`.
    pub time_scale: f64,
    pub seed: u64,
    pub n_replicates: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_scale.is_finite() && self.time_scale >= 0.0) {
            return Err(Error::Config(format!("time scale {} must be >= 0", self.time_scale)));
        }
        if self.n_replicates < 1 {
            return Err(Error::Config("n_replicates must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where a synthetic histogram came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: ModelSpec,
    pub theta_true: Vec<f64>,
    pub time_scale: f64,
    pub seed: u64,
    pub replicate: usize,
    pub substream_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticHistogram {
    pub histogram: Histogram,
    pub provenance: Provenance,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `k` derived from a base seed.
pub fn substream_seed(seed: u64, k: u64) -> u64 {
    splitmix64(seed ^ splitmix64(k.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

/// Elementwise `y * T`.
pub fn scale_signal(y: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Validation(format!("time scale {t} must be finite and >= 0")));
    }
    if let Some(v) = y.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Validation(format!("signal value {v} must be finite and >= 0")));
    }
    Ok(y.iter().map(|v| v * t).collect())
}

fn ln_factorial(k: u64) -> f64 {
    const TABLE: [f64; 10] = [
        0.0,
        0.0,
        std::f64::consts::LN_2,
        1.791_759_469_228_055,
        3.178_053_830_347_945_8,
        4.787_491_742_782_046,
        6.579_251_212_010_101,
        8.525_161_361_065_415,
        10.604_602_902_745_25,
        12.801_827_480_081_469,
    ];
    if k < 10 {
        return TABLE[k as usize];
    }
    // Stirling series for ln Gamma(k + 1)
    let x = k as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

fn poisson_inversion<R: Rng>(rng: &mut R, mu: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mu).exp();
    let mut cdf = p;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= mu / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k
}

/// Hörmann (1993) PTRD transformed rejection with decomposition.
fn poisson_ptrd<R: Rng>(rng: &mut R, mu: f64) -> u64 {
    let smu = mu.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.024_83 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    let log_mu = mu.ln();
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mu + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let v = v * inv_alpha / (a / (us * us) + b);
        if v.ln() <= -mu + k * log_mu - ln_factorial(k as u64) {
            return k as u64;
        }
    }
}

fn draw<R: Rng>(rng: &mut R, mu: f64) -> u64 {
    if mu <= 0.0 {
        0
    } else if mu < PTRD_CUTOFF {
        poisson_inversion(rng, mu)
    } else {
        poisson_ptrd(rng, mu)
    }
}

/// Independent Poisson counts for each rate, bins drawn in order from one
/// ChaCha8 stream seeded by `seed`.
pub fn sample_poisson(rate: &[f64], seed: u64) -> Result<Vec<u64>> {
    if let Some(r) = rate.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Validation(format!("rate {r} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rate.iter().map(|&mu| draw(&mut rng, mu)).collect())
}

/// `n_replicates` histograms of `T * y(theta_true)`, replicate `k` drawn
/// from substream `substream_seed(seed, k)`.
pub fn generate_synthetic(
    spec: &ModelSpec,
    theta_true: &[f64],
    grid: &DelayGrid,
    config: &SamplerConfig,
) -> Result<Vec<SyntheticHistogram>> {
    config.validate()?;
    let y = evaluate(spec, theta_true, grid)?;
    let rate = scale_signal(&y, config.time_scale)?;
    (0..config.n_replicates)
        .into_par_iter()
        .map(|k| {
            let sub = substream_seed(config.seed, k as u64);
            let counts = sample_poisson(&rate, sub)?;
            Ok(SyntheticHistogram {
                histogram: Histogram::new(grid.clone(), counts)?,
                provenance: Provenance {
                    spec: spec.clone(),
                    theta_true: theta_true.to_vec(),
                    time_scale: config.time_scale,
                    seed: config.seed,
                    replicate: k,
                    substream_seed: sub,
                },
            })
        })
        .collect()
}
