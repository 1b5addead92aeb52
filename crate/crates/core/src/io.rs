//! On-disk formats: histogram CSV, parameter files and fit reports.
//!
//! Histogram CSV:
//!
//! ```text
//! # unit: ns
//! tau,count
//! -1,0
//! 0,3
//! 1,5
//! ```
//!
//! The unit comment and the header are optional. A `# bin_width: <w>`
//! comment pins the bin width exactly; without it the width is inferred
//! from the first and last rows (a single-row file must carry it).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{check_spacing, DelayGrid};
use crate::metrics::ResidualSummary;
use crate::models::{evaluate, param_role, ModelSpec, ParamRole};
use crate::objective::{Histogram, Lambda, ObjectiveKind};
use crate::optim::{FitResult, GuessStrategy, OptimizerSettings, RestartRecord};

pub const SCHEMA_VERSION: u32 = 1;

/// Hex SHA-256 of a byte string, prefixed with the algorithm name.
pub fn digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut s = String::from("sha256:");
    for b in hash {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::from(e)
    })
}

struct CsvRows {
    unit: Option<String>,
    bin_width: Option<f64>,
    rows: Vec<(usize, String, String)>,
}

fn split_rows(text: &str) -> Result<CsvRows> {
    let mut unit = None;
    let mut bin_width = None;
    let mut rows = Vec::new();
    let mut header_allowed = true;
    for line in text.lines() {
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(u) = comment.strip_prefix("unit:") {
                unit = Some(u.trim().to_string());
            } else if let Some(w) = comment.strip_prefix("bin_width:") {
                bin_width = Some(
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::FormatFile(format!("bad bin_width comment `{}`", w.trim())))?,
                );
            }
            continue;
        }
        if header_allowed && line.to_ascii_lowercase().starts_with("tau") {
            header_allowed = false;
            continue;
        }
        header_allowed = false;
        let mut fields = line.split(',');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Format {
                row: rows.len() + 1,
                reason: format!("expected two fields, got `{line}`"),
            });
        };
        rows.push((rows.len() + 1, a.trim().to_string(), b.trim().to_string()));
    }
    if rows.is_empty() {
        return Err(Error::FormatFile("no data rows".into()));
    }
    Ok(CsvRows { unit, bin_width, rows })
}

fn parse_tau(row: usize, s: &str) -> Result<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Format {
        row,
        reason: format!("tau `{s}` is not a finite decimal"),
    })
}

fn build_grid(taus: Vec<f64>, bin_width: Option<f64>) -> Result<DelayGrid> {
    if taus.len() == 1 {
        let w = bin_width.ok_or_else(|| Error::FormatFile("single-row file needs a `# bin_width:` comment".into()))?;
        return DelayGrid::with_bin_width(taus, w);
    }
    let w = bin_width.unwrap_or((taus[taus.len() - 1] - taus[0]) / (taus.len() - 1) as f64);
    if let Some(i) = check_spacing(&taus, w) {
        return Err(Error::Format {
            row: i + 1,
            reason: format!("tau {} breaks the uniform spacing of {w}", taus[i]),
        });
    }
    DelayGrid::with_bin_width(taus, w)
}

/// Parses histogram CSV text.
pub fn parse_histogram(text: &str) -> Result<Histogram> {
    let csv = split_rows(text)?;
    let mut taus = Vec::with_capacity(csv.rows.len());
    let mut counts = Vec::with_capacity(csv.rows.len());
    for (row, a, b) in &csv.rows {
        taus.push(parse_tau(*row, a)?);
        let count = b.parse::<u64>().map_err(|_| {
            let reason = match b.parse::<f64>() {
                Ok(v) if v < 0.0 => format!("count `{b}` is negative"),
                Ok(_) => format!("count `{b}` is fractional"),
                Err(_) => format!("count `{b}` is not an integer"),
            };
            Error::Format { row: *row, reason }
        })?;
        counts.push(count);
    }
    let grid = build_grid(taus, csv.bin_width)?;
    Ok(Histogram::new(grid, counts)?.with_unit(csv.unit))
}

pub fn read_histogram(path: &Path) -> Result<Histogram> {
    parse_histogram(&fs::read_to_string(path)?)
}

/// Histogram as CSV text; parses back to an identical histogram.
pub fn format_histogram(hist: &Histogram) -> String {
    let mut s = String::new();
    if let Some(u) = hist.unit() {
        let _ = writeln!(s, "# unit: {u}");
    }
    let _ = writeln!(s, "# bin_width: {:?}", hist.grid().bin_width());
    s.push_str("tau,count\n");
    for (t, c) in hist.grid().tau().iter().zip(hist.counts()) {
        let _ = writeln!(s, "{t:?},{c}");
    }
    s
}

pub fn write_histogram(path: &Path, hist: &Histogram) -> Result<()> {
    write_atomic(path, format_histogram(hist).as_bytes())
}

/// A real-valued curve on a grid, e.g. a reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub grid: DelayGrid,
    pub y: Vec<f64>,
}

/// Parses `tau,<value>` CSV where values may be fractional.
pub fn parse_curve(text: &str) -> Result<Curve> {
    let csv = split_rows(text)?;
    let mut taus = Vec::new();
    let mut y = Vec::new();
    for (row, a, b) in &csv.rows {
        taus.push(parse_tau(*row, a)?);
        y.push(b.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Format {
            row: *row,
            reason: format!("value `{b}` is not a finite number"),
        })?);
    }
    Ok(Curve {
        grid: build_grid(taus, csv.bin_width)?,
        y,
    })
}

pub fn format_curve(tau: &[f64], y: &[f64], column: &str) -> String {
    let mut s = format!("tau,{column}\n");
    for (t, v) in tau.iter().zip(y) {
        let _ = writeln!(s, "{t:?},{v:?}");
    }
    s
}

/// Uniform grid description used in parameter files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub bin_width: f64,
    pub bins: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<DelayGrid> {
        DelayGrid::uniform(self.start, self.bin_width, self.bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

fn unpack_named(spec: &ModelSpec, named: &[NamedValue]) -> Result<Vec<f64>> {
    let names = spec.names();
    if named.len() != names.len() {
        return Err(Error::Layout {
            expected: names.len(),
            got: named.len(),
        });
    }
    names
        .iter()
        .map(|n| {
            named
                .iter()
                .find(|v| v.name == *n)
                .map(|v| v.value)
                .ok_or_else(|| Error::Config(format!("parameter `{n}` missing")))
        })
        .collect()
}

/// Known ground-truth parameters on a grid; input to simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub theta: Vec<NamedValue>,
}

impl ParamsFile {
    pub fn new(spec: &ModelSpec, theta: &[f64], grid: GridSpec, unit: Option<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            unit,
            grid,
            model: spec.clone(),
            theta: spec
                .names()
                .into_iter()
                .zip(theta)
                .map(|(n, &v)| NamedValue {
                    name: n.to_string(),
                    value: v,
                    unit: None,
                })
                .collect(),
        }
    }

    pub fn theta(&self) -> Result<Vec<f64>> {
        unpack_named(&self.model, &self.theta)
    }

    pub fn curve(&self) -> Result<Curve> {
        let grid = self.grid.build()?;
        let y = evaluate(&self.model, &self.theta()?, &grid)?;
        Ok(Curve { grid, y })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBlock {
    pub kind: ObjectiveKind,
    pub value: f64,
    pub lambda: Lambda,
    /// Resolved weights, aligned with the regularized parameters.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartEntry {
    pub index: usize,
    pub guess: Vec<f64>,
    pub theta: Vec<f64>,
    /// `None` when the restart could not be evaluated.
    pub value: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&RestartRecord> for RestartEntry {
    fn from(r: &RestartRecord) -> Self {
        Self {
            index: r.index,
            guess: r.guess.clone(),
            theta: r.theta.clone(),
            value: r.value.is_finite().then_some(r.value),
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restarts: usize,
    pub seed: u64,
    pub guess_strategy: GuessStrategy,
    pub n_converged: usize,
    pub converged: bool,
    pub top: Vec<RestartEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveBlock {
    pub tau: Vec<f64>,
    pub bin_width: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub total_photons: u64,
    pub photons_per_bin: f64,
    /// Summary of `n_i - y_i(theta_hat)`.
    pub residual_summary: ResidualSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProvenance {
    pub input_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_file: Option<String>,
    pub seed: u64,
    pub settings: OptimizerSettings,
    pub tool_version: String,
    /// Only recorded on request; it would break byte-identical re-runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Persisted result of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub model: ModelSpec,
    pub parameters: Vec<NamedValue>,
    pub objective: ObjectiveBlock,
    pub restarts: RestartSummary,
    pub fitted_curve: CurveBlock,
    pub metrics: FitMetrics,
    pub provenance: FitProvenance,
}

/// Unit string for a parameter given the time unit of the grid.
pub fn param_unit(spec: &ModelSpec, name: &str, time_unit: Option<&str>) -> String {
    let t = time_unit.unwrap_or("time");
    match param_role(spec.variant(), name) {
        ParamRole::Background | ParamRole::Amplitude => "counts/bin".to_string(),
        ParamRole::Multiplier => "1".to_string(),
        ParamRole::Rate => format!("1/{t}"),
        ParamRole::Period | ParamRole::Width => t.to_string(),
    }
}

/// Everything needed to build a report besides the fit itself.
pub struct ReportContext<'a> {
    pub spec: &'a ModelSpec,
    pub hist: &'a Histogram,
    pub lambda: Lambda,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub restarts: usize,
    pub guess_strategy: GuessStrategy,
    pub settings: OptimizerSettings,
    pub input_digest: String,
    pub input_file: Option<String>,
    pub record_wall_time: bool,
}

impl FitReportFile {
    pub fn from_fit(fit: &FitResult, ctx: ReportContext<'_>) -> Result<Self> {
        let unit = ctx.hist.unit().map(str::to_string);
        let observed: Vec<f64> = ctx.hist.counts().iter().map(|&c| c as f64).collect();
        let residual_summary = crate::metrics::residual_summary(&observed, &fit.fitted_curve)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            unit: unit.clone(),
            model: ctx.spec.clone(),
            parameters: ctx
                .spec
                .names()
                .into_iter()
                .zip(&fit.theta_hat)
                .map(|(n, &v)| NamedValue {
                    name: n.to_string(),
                    value: v,
                    unit: Some(param_unit(ctx.spec, n, unit.as_deref())),
                })
                .collect(),
            objective: ObjectiveBlock {
                kind: fit.objective_kind,
                value: fit.objective_value,
                lambda: ctx.lambda,
                weights: ctx.weights,
            },
            restarts: RestartSummary {
                restarts: ctx.restarts,
                seed: ctx.seed,
                guess_strategy: ctx.guess_strategy,
                n_converged: fit.n_converged,
                converged: fit.converged,
                top: fit.restart_records.iter().map(RestartEntry::from).collect(),
            },
            fitted_curve: CurveBlock {
                tau: ctx.hist.grid().tau().to_vec(),
                bin_width: ctx.hist.grid().bin_width(),
                y: fit.fitted_curve.clone(),
            },
            metrics: FitMetrics {
                total_photons: ctx.hist.total_photons(),
                photons_per_bin: ctx.hist.total_photons() as f64 / ctx.hist.len() as f64,
                residual_summary,
            },
            provenance: FitProvenance {
                input_digest: ctx.input_digest,
                input_file: ctx.input_file,
                seed: ctx.seed,
                settings: ctx.settings,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_time: ctx.record_wall_time.then_some(fit.wall_time),
            },
        })
    }

    pub fn theta(&self) -> Result<Vec<f64>> {
        unpack_named(&self.model, &self.parameters)
    }

    pub fn grid(&self) -> Result<DelayGrid> {
        DelayGrid::with_bin_width(self.fitted_curve.tau.clone(), self.fitted_curve.bin_width)
    }

    pub fn background(&self) -> Result<f64> {
        Ok(self.model.background(&self.theta()?))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::FormatFile(format!(
                "unsupported schema_version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    parse_json(&fs::read_to_string(path)?)
}

pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_rows_without_header() {
        let h = parse_histogram("0,3\n1,5").unwrap();
        assert_eq!(h.grid().tau(), &[0.0, 1.0]);
        assert_eq!(h.grid().bin_width(), 1.0);
        assert_eq!(h.counts(), &[3, 5]);
    }

    #[test]
    fn header_and_unit() {
        let h = parse_histogram("# unit: ns\ntau,count\n-0.5,1\n0.0,0\n0.5,2\n").unwrap();
        assert_eq!(h.unit(), Some("ns"));
        assert_eq!(h.counts(), &[1, 0, 2]);
    }

    #[test]
    fn format_errors() {
        assert!(matches!(parse_histogram("tau,count\n"), Err(Error::FormatFile(_))));
        assert!(matches!(parse_histogram(""), Err(Error::FormatFile(_))));
        match parse_histogram("0.5,2.5\n1.5,1") {
            Err(Error::Format { row: 1, reason }) => assert!(reason.contains("fractional")),
            other => panic!("{other:?}"),
        }
        match parse_histogram("0,1\n1,-2") {
            Err(Error::Format { row: 2, reason }) => assert!(reason.contains("negative")),
            other => panic!("{other:?}"),
        }
        match parse_histogram("0,1\n1,1\n2.5,1\n3,1") {
            Err(Error::Format { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_histogram("0,1,2\n").is_err());
        assert!(parse_histogram("abc,1\n1,1").is_err());
    }

    #[test]
    fn single_row_needs_width() {
        assert!(parse_histogram("0,4\n").is_err());
        let h = parse_histogram("# bin_width: 0.25\n0,4\n").unwrap();
        assert_eq!(h.grid().bin_width(), 0.25);
        assert_eq!(parse_histogram(&format_histogram(&h)).unwrap(), h);
    }

    #[test]
    fn curve_parse() {
        let c = parse_curve("tau,y\n0,0.5\n1,1.25\n").unwrap();
        assert_eq!(c.y, vec![0.5, 1.25]);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            digest(b"abc"),
            "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        #[test]
        fn histogram_round_trip(
            start in -1e4f64..1e4,
            width in 1e-3f64..10.0,
            counts in proptest::collection::vec(0u64..10_000, 2..200),
            unit in proptest::option::of("[a-z]{1,3}"),
        ) {
            let grid = DelayGrid::uniform(start, width, counts.len()).unwrap();
            let h = Histogram::new(grid, counts).unwrap().with_unit(unit);
            let text = format_histogram(&h);
            let back = parse_histogram(&text).unwrap();
            prop_assert_eq!(&back, &h);
            prop_assert_eq!(format_histogram(&back), text);
        }
    }
}
