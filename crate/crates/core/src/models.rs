//! Closed-form correlation ansatzes and their parameter layouts.
//!
//! Two families are supported: a pulsed single-emitter model (a train of
//! two-sided exponential peaks with a modified center peak, under a slow
//! envelope) and a thermal model (a sum of centered Gaussians). Both sit on a
//! constant background `c0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DelayGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum BackgroundMode {
    Free,
    Fixed(f64),
}

impl Default for BackgroundMode {
    fn default() -> Self {
        BackgroundMode::Free
    }
}

impl BackgroundMode {
    fn validate(&self) -> Result<()> {
        match *self {
            BackgroundMode::Fixed(v) if !(v.is_finite() && v >= 0.0) => Err(Error::Parameter {
                name: "c0".into(),
                value: v,
                reason: "fixed background must be finite and >= 0".into(),
            }),
            _ => Ok(()),
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, BackgroundMode::Free)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulsedEmitterSpec {
    /// Side peaks kept on each side of the center peak.
    pub n_side_pulses: usize,
    #[serde(default)]
    pub background: BackgroundMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsedEmitterParams {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSumSpec {
    pub num_gaussians: usize,
    #[serde(default)]
    pub background: BackgroundMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSumParams {
    pub c0: f64,
    pub c: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelVariant {
    PulsedEmitter(PulsedEmitterSpec),
    ThermalGaussianSum(ThermalSumSpec),
}

/// One entry of a flat parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub regularized: bool,
    /// Draw initial guesses log-uniformly (rates and widths).
    #[serde(default)]
    pub log_scale: bool,
}

impl ParamDef {
    pub fn new(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            lower,
            upper,
            regularized: false,
            log_scale: false,
        }
    }

    pub fn regularized(mut self, on: bool) -> Self {
        self.regularized = on;
        self
    }

    pub fn log_scale(mut self, on: bool) -> Self {
        self.log_scale = on;
        self
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Which parameter a name refers to; used for units and amplitude scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Background,
    Amplitude,
    Multiplier,
    Rate,
    Period,
    Width,
}

/// Model variant plus validated flat parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    variant: ModelVariant,
    layout: Vec<ParamDef>,
}

#[derive(Serialize, Deserialize)]
struct RawModelSpec {
    variant: ModelVariant,
    layout: Vec<ParamDef>,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = Error;
    fn try_from(raw: RawModelSpec) -> Result<Self> {
        ModelSpec::new(raw.variant, raw.layout)
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(m: ModelSpec) -> Self {
        RawModelSpec {
            variant: m.variant,
            layout: m.layout,
        }
    }
}

/// Parameter names in layout order for a variant.
pub fn layout_names(variant: &ModelVariant) -> Vec<String> {
    let mut names = Vec::new();
    match variant {
        ModelVariant::PulsedEmitter(s) => {
            if s.background.is_free() {
                names.push("c0".to_string());
            }
            for n in ["c1", "c2", "gamma1", "gamma2", "lambda"] {
                names.push(n.to_string());
            }
        }
        ModelVariant::ThermalGaussianSum(s) => {
            if s.background.is_free() {
                names.push("c0".to_string());
            }
            names.extend((1..=s.num_gaussians).map(|k| format!("c{k}")));
            names.extend((1..=s.num_gaussians).map(|k| format!("sigma{k}")));
        }
    }
    names
}

/// Role of a layout name for a variant.
pub fn param_role(variant: &ModelVariant, name: &str) -> ParamRole {
    match (variant, name) {
        (_, "c0") => ParamRole::Background,
        (ModelVariant::PulsedEmitter(_), "c1") => ParamRole::Amplitude,
        (ModelVariant::PulsedEmitter(_), "c2") => ParamRole::Multiplier,
        (ModelVariant::PulsedEmitter(_), "gamma1" | "gamma2") => ParamRole::Rate,
        (ModelVariant::PulsedEmitter(_), _) => ParamRole::Period,
        (ModelVariant::ThermalGaussianSum(_), n) if n.starts_with("sigma") => ParamRole::Width,
        (ModelVariant::ThermalGaussianSum(_), _) => ParamRole::Amplitude,
    }
}

impl ModelSpec {
    pub fn new(variant: ModelVariant, layout: Vec<ParamDef>) -> Result<Self> {
        match &variant {
            ModelVariant::PulsedEmitter(s) => {
                if s.n_side_pulses < 1 {
                    return Err(Error::Config("n_side_pulses must be >= 1".into()));
                }
                s.background.validate()?;
            }
            ModelVariant::ThermalGaussianSum(s) => {
                if s.num_gaussians < 1 {
                    return Err(Error::Config("num_gaussians must be >= 1".into()));
                }
                s.background.validate()?;
            }
        }
        let expected = layout_names(&variant);
        if layout.len() != expected.len() {
            return Err(Error::Layout {
                expected: expected.len(),
                got: layout.len(),
            });
        }
        for (def, want) in layout.iter().zip(&expected) {
            if &def.name != want {
                return Err(Error::Config(format!(
                    "layout entry `{}` found where `{}` was expected",
                    def.name, want
                )));
            }
            if !(def.lower.is_finite() && def.upper.is_finite() && def.lower < def.upper) {
                return Err(Error::Config(format!(
                    "bounds for `{}` must be finite with lower < upper, got [{}, {}]",
                    def.name, def.lower, def.upper
                )));
            }
            if def.log_scale && def.lower <= 0.0 {
                return Err(Error::Config(format!(
                    "log-scaled parameter `{}` needs a positive lower bound",
                    def.name
                )));
            }
        }
        Ok(Self { variant, layout })
    }

    /// Layout with scale-aware default bounds for the given grid and count
    /// maximum. Amplitudes are regularized, background is not.
    pub fn with_default_bounds(variant: ModelVariant, grid: &DelayGrid, max_count: u64) -> Result<Self> {
        let b = DefaultBounds::new(grid, max_count);
        let layout = layout_names(&variant)
            .into_iter()
            .map(|name| {
                let role = param_role(&variant, &name);
                match role {
                    ParamRole::Background => ParamDef::new(&name, 0.0, b.amplitude),
                    ParamRole::Amplitude => ParamDef::new(&name, 0.0, b.amplitude).regularized(true),
                    ParamRole::Multiplier => ParamDef::new(&name, 0.0, b.multiplier).regularized(true),
                    ParamRole::Rate => ParamDef::new(&name, b.rate.0, b.rate.1).log_scale(true),
                    ParamRole::Period => ParamDef::new(&name, b.period.0, b.period.1),
                    ParamRole::Width => ParamDef::new(&name, b.width.0, b.width.1).log_scale(true),
                }
            })
            .collect();
        Self::new(variant, layout)
    }

    /// Pulsed model with default truncation and default bounds.
    pub fn pulsed(grid: &DelayGrid, max_count: u64, background: BackgroundMode) -> Result<Self> {
        let b = DefaultBounds::new(grid, max_count);
        let n = default_truncation(grid, b.period.0)?;
        Self::with_default_bounds(
            ModelVariant::PulsedEmitter(PulsedEmitterSpec {
                n_side_pulses: n,
                background,
            }),
            grid,
            max_count,
        )
    }

    pub fn thermal(grid: &DelayGrid, max_count: u64, num_gaussians: usize, background: BackgroundMode) -> Result<Self> {
        Self::with_default_bounds(
            ModelVariant::ThermalGaussianSum(ThermalSumSpec {
                num_gaussians,
                background,
            }),
            grid,
            max_count,
        )
    }

    pub fn variant(&self) -> &ModelVariant {
        &self.variant
    }

    pub fn layout(&self) -> &[ParamDef] {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.layout.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.iter().position(|d| d.name == name)
    }

    pub fn role(&self, index: usize) -> ParamRole {
        param_role(&self.variant, &self.layout[index].name)
    }

    pub fn lower(&self) -> Vec<f64> {
        self.layout.iter().map(|d| d.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.layout.iter().map(|d| d.upper).collect()
    }

    /// Indices of regularized parameters, in layout order.
    pub fn regularized_indices(&self) -> Vec<usize> {
        (0..self.layout.len()).filter(|&i| self.layout[i].regularized).collect()
    }

    /// Replaces the bounds of one parameter.
    pub fn set_bounds(&mut self, name: &str, lower: f64, upper: f64) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let mut layout = self.layout.clone();
        layout[i].lower = lower;
        layout[i].upper = upper;
        *self = Self::new(self.variant.clone(), layout)?;
        Ok(())
    }

    /// Replaces the regularization mask.
    pub fn set_regularized(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.layout.len() {
            return Err(Error::Layout {
                expected: self.layout.len(),
                got: mask.len(),
            });
        }
        for (d, &m) in self.layout.iter_mut().zip(mask) {
            d.regularized = m;
        }
        Ok(())
    }

    pub fn check_bounds(&self, theta: &[f64]) -> Result<()> {
        self.check_len(theta)?;
        for (d, &v) in self.layout.iter().zip(theta) {
            if !d.contains(v) {
                return Err(Error::Parameter {
                    name: d.name.clone(),
                    value: v,
                    reason: format!("outside bounds [{}, {}]", d.lower, d.upper),
                });
            }
        }
        Ok(())
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.layout.len() {
            return Err(Error::Layout {
                expected: self.layout.len(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Unpacks a flat vector into pulsed parameters.
    pub fn pulsed_params(&self, theta: &[f64]) -> Result<PulsedEmitterParams> {
        self.check_len(theta)?;
        let ModelVariant::PulsedEmitter(s) = &self.variant else {
            return Err(Error::Config("not a pulsed-emitter model".into()));
        };
        let (c0, rest) = split_background(s.background, theta);
        Ok(PulsedEmitterParams {
            c0,
            c1: rest[0],
            c2: rest[1],
            gamma1: rest[2],
            gamma2: rest[3],
            lambda: rest[4],
        })
    }

    pub fn thermal_params(&self, theta: &[f64]) -> Result<ThermalSumParams> {
        self.check_len(theta)?;
        let ModelVariant::ThermalGaussianSum(s) = &self.variant else {
            return Err(Error::Config("not a thermal model".into()));
        };
        let (c0, rest) = split_background(s.background, theta);
        let k = s.num_gaussians;
        Ok(ThermalSumParams {
            c0,
            c: rest[..k].to_vec(),
            sigma: rest[k..].to_vec(),
        })
    }

    /// Flat vector for pulsed parameters (drops c0 when it is fixed).
    pub fn pack_pulsed(&self, p: &PulsedEmitterParams) -> Result<Vec<f64>> {
        let ModelVariant::PulsedEmitter(s) = &self.variant else {
            return Err(Error::Config("not a pulsed-emitter model".into()));
        };
        let mut v = Vec::with_capacity(6);
        if s.background.is_free() {
            v.push(p.c0);
        }
        v.extend([p.c1, p.c2, p.gamma1, p.gamma2, p.lambda]);
        Ok(v)
    }

    pub fn pack_thermal(&self, p: &ThermalSumParams) -> Result<Vec<f64>> {
        let ModelVariant::ThermalGaussianSum(s) = &self.variant else {
            return Err(Error::Config("not a thermal model".into()));
        };
        if p.c.len() != s.num_gaussians || p.sigma.len() != s.num_gaussians {
            return Err(Error::Layout {
                expected: s.num_gaussians,
                got: p.c.len().max(p.sigma.len()),
            });
        }
        let mut v = Vec::new();
        if s.background.is_free() {
            v.push(p.c0);
        }
        v.extend_from_slice(&p.c);
        v.extend_from_slice(&p.sigma);
        Ok(v)
    }

    /// Background level implied by `theta` (the fixed value when frozen).
    pub fn background(&self, theta: &[f64]) -> f64 {
        let mode = match &self.variant {
            ModelVariant::PulsedEmitter(s) => s.background,
            ModelVariant::ThermalGaussianSum(s) => s.background,
        };
        match mode {
            BackgroundMode::Fixed(v) => v,
            BackgroundMode::Free => theta[0],
        }
    }

    /// Parameters of the signal `T * y(theta)`: background and amplitudes
    /// scale, shapes and the center-peak multiplier do not.
    pub fn scale_amplitudes(&self, theta: &[f64], t: f64) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &v)| match self.role(i) {
                ParamRole::Background | ParamRole::Amplitude => v * t,
                _ => v,
            })
            .collect()
    }

    /// Same model with every amplitude bound (and a fixed background) scaled by `t`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        let mut variant = self.variant.clone();
        match &mut variant {
            ModelVariant::PulsedEmitter(s) => scale_fixed(&mut s.background, t),
            ModelVariant::ThermalGaussianSum(s) => scale_fixed(&mut s.background, t),
        }
        let mut layout = self.layout.clone();
        for (i, d) in layout.iter_mut().enumerate() {
            if matches!(self.role(i), ParamRole::Background | ParamRole::Amplitude) {
                d.lower *= t;
                d.upper *= t;
            }
        }
        Self::new(variant, layout)
    }
}

fn scale_fixed(mode: &mut BackgroundMode, t: f64) {
    if let BackgroundMode::Fixed(v) = mode {
        *v *= t;
    }
}

fn split_background(mode: BackgroundMode, theta: &[f64]) -> (f64, &[f64]) {
    match mode {
        BackgroundMode::Fixed(v) => (v, theta),
        BackgroundMode::Free => (theta[0], &theta[1..]),
    }
}

/// Scale-aware default boxes derived from the grid and the data.
#[derive(Debug, Clone, Copy)]
pub struct DefaultBounds {
    pub amplitude: f64,
    pub multiplier: f64,
    pub rate: (f64, f64),
    pub period: (f64, f64),
    pub width: (f64, f64),
}

impl DefaultBounds {
    pub fn new(grid: &DelayGrid, max_count: u64) -> Self {
        let w = grid.bin_width();
        let tmax = grid.max_abs_tau().max(w);
        Self {
            amplitude: 10.0 * max_count.max(1) as f64,
            multiplier: 10.0,
            rate: (1e-4 / tmax, 10.0 / w),
            period: (2.0 * w, tmax.max(4.0 * w)),
            width: (0.5 * w, 2.0 * tmax),
        }
    }
}

/// Smallest side-pulse truncation whose window covers every grid point
/// with one period of margin for any period `>= lambda_lower_bound`.
pub fn default_truncation(grid: &DelayGrid, lambda_lower_bound: f64) -> Result<usize> {
    if !(lambda_lower_bound.is_finite() && lambda_lower_bound > 0.0) {
        return Err(Error::Parameter {
            name: "lambda".into(),
            value: lambda_lower_bound,
            reason: "lower bound must be positive".into(),
        });
    }
    let target = grid.max_abs_tau() + lambda_lower_bound;
    // k = N - 1
    let mut k = (target / lambda_lower_bound).ceil() as usize;
    while k > 0 && (k - 1) as f64 * lambda_lower_bound >= target {
        k -= 1;
    }
    while (k as f64) * lambda_lower_bound < target {
        k += 1;
    }
    Ok(k + 1)
}

fn check(name: &str, value: f64, ok: bool, reason: &str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter {
            name: name.into(),
            value,
            reason: reason.into(),
        })
    }
}

impl PulsedEmitterParams {
    pub fn validate(&self) -> Result<()> {
        check("c0", self.c0, self.c0 >= 0.0, "must be >= 0")?;
        check("c1", self.c1, self.c1 >= 0.0, "must be >= 0")?;
        check("c2", self.c2, self.c2 >= 0.0, "must be >= 0")?;
        check("gamma1", self.gamma1, self.gamma1 >= 0.0, "must be >= 0")?;
        check("gamma2", self.gamma2, self.gamma2 > 0.0, "must be > 0")?;
        check("lambda", self.lambda, self.lambda > 0.0, "must be > 0")
    }
}

impl ThermalSumParams {
    pub fn validate(&self, spec: &ThermalSumSpec) -> Result<()> {
        check("c0", self.c0, self.c0 >= 0.0, "must be >= 0")?;
        if self.c.len() != spec.num_gaussians || self.sigma.len() != spec.num_gaussians {
            return Err(Error::Layout {
                expected: spec.num_gaussians,
                got: self.c.len().max(self.sigma.len()),
            });
        }
        for (k, &c) in self.c.iter().enumerate() {
            check(&format!("c{}", k + 1), c, c >= 0.0, "must be >= 0")?;
        }
        for (k, &s) in self.sigma.iter().enumerate() {
            check(&format!("sigma{}", k + 1), s, s > 0.0, "must be > 0")?;
        }
        Ok(())
    }
}

/// `sum_{k=0}^{count-1} exp(-k * decay)` given `one_minus_r = 1 - exp(-decay)`.
#[inline]
fn geometric(count: i64, decay: f64, one_minus_r: f64) -> f64 {
    if count <= 0 {
        return 0.0;
    }
    if one_minus_r <= 0.0 {
        return count as f64;
    }
    -(-(count as f64) * decay).exp_m1() / one_minus_r
}

/// Truncated side-peak sum `sum_{0<|n|<=N} exp(-gamma2 |tau - n lambda|)`,
/// evaluated as four geometric series.
#[inline]
fn side_peaks(tau: f64, gamma2: f64, lambda: f64, n: i64, decay: f64, one_minus_r: f64) -> f64 {
    // first index with n * lambda >= tau
    let k0 = (tau / lambda).ceil() as i64;
    let mut s = 0.0;
    for (a, b) in [(-n, -1), (1, n)] {
        let hi = b.min(k0 - 1);
        if a <= hi {
            let lead = (tau - hi as f64 * lambda).max(0.0);
            s += (-gamma2 * lead).exp() * geometric(hi - a + 1, decay, one_minus_r);
        }
        let lo = a.max(k0);
        if lo <= b {
            let lead = (lo as f64 * lambda - tau).max(0.0);
            s += (-gamma2 * lead).exp() * geometric(b - lo + 1, decay, one_minus_r);
        }
    }
    s
}

pub fn eval_pulsed_into(
    p: &PulsedEmitterParams,
    spec: &PulsedEmitterSpec,
    grid: &DelayGrid,
    out: &mut [f64],
) -> Result<()> {
    p.validate()?;
    if spec.n_side_pulses < 1 {
        return Err(Error::Config("n_side_pulses must be >= 1".into()));
    }
    let coverage = (spec.n_side_pulses as f64 - 0.5) * p.lambda;
    let max_tau = grid.max_abs_tau();
    if max_tau > coverage {
        return Err(Error::TruncationCoverage {
            n_side_pulses: spec.n_side_pulses,
            max_tau,
            coverage,
        });
    }
    let n = spec.n_side_pulses as i64;
    let decay = p.gamma2 * p.lambda;
    let one_minus_r = -(-decay).exp_m1();
    for (y, &tau) in out.iter_mut().zip(grid.tau()) {
        let a = tau.abs();
        let center = p.c2 * (-p.gamma2 * a).exp();
        let sides = side_peaks(tau, p.gamma2, p.lambda, n, decay, one_minus_r);
        *y = p.c0 + p.c1 * (-p.gamma1 * a).exp() * (center + sides);
    }
    Ok(())
}

/// Pulsed single-emitter ansatz on the grid.
pub fn eval_pulsed(p: &PulsedEmitterParams, spec: &PulsedEmitterSpec, grid: &DelayGrid) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.len()];
    eval_pulsed_into(p, spec, grid, &mut out)?;
    Ok(out)
}

pub fn eval_thermal_into(p: &ThermalSumParams, spec: &ThermalSumSpec, grid: &DelayGrid, out: &mut [f64]) -> Result<()> {
    p.validate(spec)?;
    let inv: Vec<f64> = p.sigma.iter().map(|s| -0.5 / (s * s)).collect();
    for (y, &tau) in out.iter_mut().zip(grid.tau()) {
        let t2 = tau * tau;
        *y = p.c0 + p.c.iter().zip(&inv).map(|(c, k)| c * (k * t2).exp()).sum::<f64>();
    }
    Ok(())
}

/// Thermal Gaussian-sum ansatz on the grid.
pub fn eval_thermal(p: &ThermalSumParams, spec: &ThermalSumSpec, grid: &DelayGrid) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.len()];
    eval_thermal_into(p, spec, grid, &mut out)?;
    Ok(out)
}

/// Evaluates `y(theta)` for any model into `out`, validating bounds.
pub fn evaluate_into(spec: &ModelSpec, theta: &[f64], grid: &DelayGrid, out: &mut [f64]) -> Result<()> {
    spec.check_bounds(theta)?;
    if out.len() != grid.len() {
        return Err(Error::Alignment(format!(
            "output buffer has {} entries, grid has {}",
            out.len(),
            grid.len()
        )));
    }
    match &spec.variant {
        ModelVariant::PulsedEmitter(s) => eval_pulsed_into(&spec.pulsed_params(theta)?, s, grid, out),
        ModelVariant::ThermalGaussianSum(s) => eval_thermal_into(&spec.thermal_params(theta)?, s, grid, out),
    }
}

pub fn evaluate(spec: &ModelSpec, theta: &[f64], grid: &DelayGrid) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.len()];
    evaluate_into(spec, theta, grid, &mut out)?;
    Ok(out)
}

/// Background-subtracted ratio of the center peak to the first side peak,
/// `(y(0) - c0) / (y(lambda) - c0)`. Below 0.5 indicates antibunching.
pub fn center_peak_ratio(p: &PulsedEmitterParams, spec: &PulsedEmitterSpec) -> Result<f64> {
    let probe = DelayGrid::with_bin_width(vec![0.0, p.lambda], p.lambda)?;
    let mut spec = spec.clone();
    spec.n_side_pulses = spec.n_side_pulses.max(2);
    let y = eval_pulsed(p, &spec, &probe)?;
    Ok((y[0] - p.c0) / (y[1] - p.c0))
}
