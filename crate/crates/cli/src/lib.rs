//! `g2fit` command-line driver: fit histograms, simulate longer acquisitions,
//! score fits against references and run paired estimator benchmarks.
//!
//! Every command is a pure function of its input files, flags and seed.
//! Files are written atomically.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use g2fit_core::bench::{run_ensemble_benchmark, BenchmarkConfig, EnsembleBenchmark, Method};
use g2fit_core::fixtures::{self, Fixture};
use g2fit_core::io::{
    digest, parse_curve, parse_histogram, to_json_pretty, write_atomic, write_histogram, Curve, FitReportFile, ParamsFile, ReportContext, SCHEMA_VERSION,
};
use g2fit_core::metrics::{metrics_report, MetricsReport};
use g2fit_core::optim::{multistart_least_squares, multistart_maximize};
use g2fit_core::sampler::{generate_synthetic, SamplerConfig};
use g2fit_core::{
    BackgroundMode, DelayGrid, Error, FitProblem, GuessStrategy, ModelSpec, MultiStartPlan, ObjectiveConfig,
    OptimizerSettings,
};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

pub const THREADS_ENV: &str = "G2FIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "g2fit", version, about = "Few-photon reconstruction of g2 correlation histograms")]
pub struct Cli {
    /// Worker threads; overrides G2FIT_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a histogram and write a JSON report.
    Fit(FitArgs),
    /// Sample Poisson histograms from a fit report or parameter file.
    Simulate(SimulateArgs),
    /// Score a fit against a reference curve.
    Evaluate(EvaluateArgs),
    /// Paired comparison of estimators on a bundled fixture.
    Benchmark(BenchmarkArgs),
    /// Write the parameter file of a bundled fixture.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelName {
    Pulsed,
    Thermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    Pulsed,
    Thermal,
}

impl FixtureName {
    pub fn load(self) -> Fixture {
        match self {
            FixtureName::Pulsed => fixtures::pulsed(),
            FixtureName::Thermal => fixtures::thermal(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Map,
    Mle,
    Lsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Uniform,
    Lhs,
}

impl From<Strategy> for GuessStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Uniform => GuessStrategy::UniformInBounds,
            Strategy::Lhs => GuessStrategy::LatinHypercube,
        }
    }
}

/// `name=lower:upper`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOverride {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

fn parse_bound(s: &str) -> std::result::Result<BoundOverride, String> {
    let (name, range) = s.split_once('=').ok_or("expected name=lower:upper")?;
    let (lo, hi) = range.split_once(':').ok_or("expected name=lower:upper")?;
    let lower = lo.trim().parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let upper = hi.trim().parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    Ok(BoundOverride {
        name: name.trim().to_string(),
        lower,
        upper,
    })
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    #[arg(long, default_value_t = 64)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Strategy::Uniform)]
    pub guess_strategy: Strategy,
    #[arg(long, default_value_t = 1e-6)]
    pub xtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub ftol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Replace the default box of one parameter, e.g. `lambda=22.5:27.5`.
    #[arg(long = "bound", value_parser = parse_bound)]
    pub bounds: Vec<BoundOverride>,
}

impl OptimizerArgs {
    pub fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            xtol: self.xtol,
            ftol: self.ftol,
            max_iters: self.max_iters,
            ..OptimizerSettings::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelName,
    /// Laplace prior weight on the amplitudes; 0 gives maximum likelihood.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Freeze the background c0 at this value.
    #[arg(long)]
    pub fix_background: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub n_gaussians: usize,
    /// Side pulses per direction; default covers the delay window.
    #[arg(long)]
    pub n_side_pulses: Option<usize>,
    /// Least-squares baseline (Levenberg-Marquardt) instead of the likelihood.
    #[arg(long)]
    pub least_squares: bool,
    #[command(flatten)]
    pub opt: OptimizerArgs,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the fitted curve as `tau,fit` CSV.
    #[arg(long)]
    pub curve_csv: Option<PathBuf>,
    /// Store the fit duration in the report (makes re-runs differ).
    #[arg(long)]
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["report", "params"])))]
pub struct SimulateArgs {
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub time_scale: f64,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV curve (`tau,value`) or JSON fit report / parameter file.
    #[arg(long)]
    pub reference: PathBuf,
    /// Subtract the fitted background from both curves before scoring.
    #[arg(long)]
    pub subtract_background: bool,
    /// Multiply the reference curve by this integration-time factor.
    #[arg(long, default_value_t = 1.0)]
    pub reference_scale: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub fixture: FixtureName,
    /// Expected photon total of each synthetic histogram.
    #[arg(long)]
    pub budget: f64,
    /// Number of paired seeds, `0..seeds`.
    #[arg(long, default_value_t = 30)]
    pub seeds: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "map,mle,lsq")]
    pub methods: Vec<MethodName>,
    /// Prior weights tried for `map`.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    #[arg(long, value_enum, default_value_t = Strategy::Uniform)]
    pub guess_strategy: Strategy,
    #[arg(long = "bound", value_parser = parse_bound)]
    pub bounds: Vec<BoundOverride>,
    /// Single local run started at the true parameters.
    #[arg(long)]
    pub start_at_truth: bool,
    #[arg(long)]
    pub record_wall_time: bool,
    #[arg(long)]
    pub outdir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    #[arg(value_enum)]
    pub name: FixtureName,
    /// Scale the amplitudes so the curve holds this many expected photons.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub output: PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Input(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Input(e) => write!(f, "error: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let threads = cli.threads.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "usage error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut out_text = String::new();
    let mut err_text = String::new();
    let code = match pool.install(|| dispatch(&cli.command, &mut out_text, &mut err_text)) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err_text, "{e}");
            e.exit_code()
        }
    };
    let _ = out.write_all(out_text.as_bytes());
    let _ = err.write_all(err_text.as_bytes());
    code
}

fn dispatch(command: &Command, out: &mut String, err: &mut String) -> CliResult<u8> {
    match command {
        Command::Fit(a) => {
            let (report, code) = cmd_fit(a)?;
            let wall = report.provenance.wall_time.map(|t| format!(" wall {t:.2}s")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{} objective {:.6} photons {} converged {}/{}{}",
                report.objective.kind,
                report.objective.value,
                report.metrics.total_photons,
                report.restarts.n_converged,
                report.restarts.restarts,
                wall
            );
            if code == EXIT_NOT_CONVERGED {
                let _ = writeln!(err, "warning: no restart converged; best-effort result written");
            }
            Ok(code)
        }
        Command::Simulate(a) => {
            let manifest = cmd_simulate(a)?;
            let _ = writeln!(
                out,
                "wrote {} histograms to {} (mean photons {:.1})",
                manifest.replicates.len(),
                a.outdir.display(),
                manifest.mean_total_photons
            );
            Ok(EXIT_OK)
        }
        Command::Evaluate(a) => {
            let m = cmd_evaluate(a)?;
            let _ = writeln!(
                out,
                "nrmse {:.6} photons {} photons_per_bin {:.4} residual max_abs {:.6} mean {:.6} variance {:.6}",
                m.nrmse,
                m.total_photons,
                m.photons_per_bin,
                m.residual_summary.max_abs,
                m.residual_summary.mean,
                m.residual_summary.variance
            );
            Ok(EXIT_OK)
        }
        Command::Benchmark(a) => {
            if a.seeds < 30 {
                let _ = writeln!(err, "warning: {} seeds; at least 30 are needed for stable variances", a.seeds);
            }
            let b = cmd_benchmark(a)?;
            for m in &b.methods {
                let _ = writeln!(
                    out,
                    "{} success {:.3} median_nrmse {}{}",
                    m.method,
                    m.success_rate,
                    m.median_nrmse.map(|v| format!("{v:.6}")).unwrap_or_else(|| "nan".into()),
                    if m.failed { " FAILED" } else { "" }
                );
            }
            Ok(EXIT_OK)
        }
        Command::Fixture(a) => {
            cmd_fixture(a)?;
            Ok(EXIT_OK)
        }
    }
}

pub fn cmd_fixture(a: &FixtureArgs) -> CliResult<ParamsFile> {
    let fx = a.name.load();
    let params = match a.budget {
        None => fx.params.clone(),
        Some(b) if b.is_finite() && b > 0.0 => {
            let t = fx.time_scale_for_budget(b);
            ParamsFile::new(&fx.spec.scaled(t)?, &fx.theta_at(t), fx.params.grid, fx.params.unit.clone())
        }
        Some(b) => return Err(CliError::Usage(format!("budget must be positive, got {b}"))),
    };
    write_atomic(&a.output, to_json_pretty(&params)?.as_bytes())?;
    Ok(params)
}

/// Model layout for a histogram with default bounds and overrides applied.
pub fn build_spec(
    model: ModelName,
    grid: &DelayGrid,
    max_count: u64,
    fix_background: Option<f64>,
    n_gaussians: usize,
    n_side_pulses: Option<usize>,
    bounds: &[BoundOverride],
) -> CliResult<ModelSpec> {
    let background = match fix_background {
        Some(v) => BackgroundMode::Fixed(v),
        None => BackgroundMode::Free,
    };
    let mut spec = match model {
        ModelName::Pulsed => {
            let spec = ModelSpec::pulsed(grid, max_count, background)?;
            match n_side_pulses {
                Some(n) => {
                    let mut variant = spec.variant().clone();
                    if let g2fit_core::ModelVariant::PulsedEmitter(p) = &mut variant {
                        p.n_side_pulses = n;
                    }
                    ModelSpec::new(variant, spec.layout().to_vec())?
                }
                None => spec,
            }
        }
        ModelName::Thermal => ModelSpec::thermal(grid, max_count, n_gaussians, background)?,
    };
    for b in bounds {
        spec.set_bounds(&b.name, b.lower, b.upper)?;
    }
    Ok(spec)
}

pub fn cmd_fit(a: &FitArgs) -> CliResult<(FitReportFile, u8)> {
    let bytes = fs::read(&a.input).map_err(Error::from)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::FormatFile("input is not UTF-8".into()))?;
    let hist = parse_histogram(&text)?;
    let spec = build_spec(
        a.model,
        hist.grid(),
        hist.max_count(),
        a.fix_background,
        a.n_gaussians,
        a.n_side_pulses,
        &a.opt.bounds,
    )?;
    let settings = a.opt.settings();
    let plan = MultiStartPlan {
        restarts: a.opt.restarts,
        seed: a.opt.seed,
        guess_strategy: a.opt.guess_strategy.into(),
        parallel: true,
        ..MultiStartPlan::default()
    };
    if a.least_squares && a.lambda != 0.0 {
        return Err(CliError::Usage("--lambda has no effect with --least-squares".into()));
    }
    let config = if a.least_squares {
        ObjectiveConfig::lsq()
    } else if a.lambda == 0.0 {
        ObjectiveConfig::mle()
    } else {
        ObjectiveConfig::map(a.lambda)
    };
    let problem = FitProblem::new(spec.clone(), hist.clone(), config.clone())?;
    let fit = if a.least_squares {
        multistart_least_squares(&spec, &hist, &plan, &settings)?
    } else {
        multistart_maximize(&problem, &plan, &settings)?
    };
    let report = FitReportFile::from_fit(
        &fit,
        ReportContext {
            spec: &spec,
            hist: &hist,
            lambda: config.lambda.clone(),
            weights: problem.weights().to_vec(),
            seed: a.opt.seed,
            restarts: a.opt.restarts,
            guess_strategy: plan.guess_strategy,
            settings,
            input_digest: digest(&bytes),
            input_file: a.input.file_name().map(|f| f.to_string_lossy().into_owned()),
            record_wall_time: a.record_wall_time,
        },
    )?;
    report.write(&a.output)?;
    if let Some(path) = &a.curve_csv {
        let csv = g2fit_core::io::format_curve(hist.grid().tau(), &fit.fitted_curve, "fit");
        write_atomic(path, csv.as_bytes())?;
    }
    let code = if fit.converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    Ok((report, code))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub replicate: usize,
    pub file: String,
    pub substream_seed: u64,
    pub total_photons: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub schema_version: u32,
    pub source_digest: String,
    pub source_file: Option<String>,
    pub time_scale: f64,
    pub seed: u64,
    pub expected_total_photons: f64,
    pub mean_total_photons: f64,
    pub replicates: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn replicate_file_name(k: usize) -> String {
    format!("replicate_{k:04}.csv")
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<SimulationManifest> {
    let path = match (&a.report, &a.params) {
        (Some(p), None) | (None, Some(p)) => p,
        _ => return Err(CliError::Usage("give exactly one of --report or --params".into())),
    };
    let text = fs::read_to_string(path).map_err(Error::from)?;
    let (spec, theta, grid, unit) = if a.report.is_some() {
        let r = FitReportFile::from_json(&text)?;
        let theta = r.theta()?;
        let grid = r.grid()?;
        (r.model, theta, grid, r.unit)
    } else {
        let p: ParamsFile = serde_json::from_str(&text).map_err(Error::from)?;
        let theta = p.theta()?;
        let grid = p.grid.build()?;
        (p.model, theta, grid, p.unit)
    };
    let reps = generate_synthetic(
        &spec,
        &theta,
        &grid,
        &SamplerConfig {
            time_scale: a.time_scale,
            seed: a.seed,
            n_replicates: a.replicates,
        },
    )?;
    fs::create_dir_all(&a.outdir).map_err(Error::from)?;
    let mut entries = Vec::with_capacity(reps.len());
    for rep in reps {
        let k = rep.provenance.replicate;
        let file = replicate_file_name(k);
        let hist = rep.histogram.with_unit(unit.clone());
        write_histogram(&a.outdir.join(&file), &hist)?;
        entries.push(ManifestEntry {
            replicate: k,
            file,
            substream_seed: rep.provenance.substream_seed,
            total_photons: hist.total_photons(),
        });
    }
    let expected: f64 = g2fit_core::evaluate(&spec, &theta, &grid)?.iter().sum::<f64>() * a.time_scale;
    let manifest = SimulationManifest {
        schema_version: SCHEMA_VERSION,
        source_digest: digest(text.as_bytes()),
        source_file: path.file_name().map(|f| f.to_string_lossy().into_owned()),
        time_scale: a.time_scale,
        seed: a.seed,
        expected_total_photons: expected,
        mean_total_photons: entries.iter().map(|e| e.total_photons as f64).sum::<f64>() / entries.len() as f64,
        replicates: entries,
    };
    write_atomic(&a.outdir.join(MANIFEST_FILE), to_json_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Reference curve plus its own background, when it carries a model.
fn load_reference(path: &Path) -> CliResult<(Curve, Option<f64>)> {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{');
    if !is_json {
        return Ok((parse_curve(&text)?, None));
    }
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    if value.get("parameters").is_some() {
        let r = FitReportFile::from_json(&text)?;
        let c0 = r.background()?;
        Ok((
            Curve {
                grid: r.grid()?,
                y: r.fitted_curve.y,
            },
            Some(c0),
        ))
    } else if value.get("theta").is_some() {
        let p: ParamsFile = serde_json::from_value(value).map_err(Error::from)?;
        let c0 = p.model.background(&p.theta()?);
        Ok((p.curve()?, Some(c0)))
    } else {
        Err(Error::FormatFile("reference JSON is neither a fit report nor a parameter file".into()).into())
    }
}

fn check_aligned(a: &DelayGrid, b: &DelayGrid) -> CliResult<()> {
    let tol = 1e-9 * a.bin_width().max(b.bin_width());
    let same = a.len() == b.len()
        && (a.bin_width() - b.bin_width()).abs() <= tol
        && a.tau().iter().zip(b.tau()).all(|(x, y)| (x - y).abs() <= tol);
    if same {
        Ok(())
    } else {
        Err(Error::Alignment(format!(
            "fit grid ({} bins from {}) differs from reference grid ({} bins from {})",
            a.len(),
            a.tau()[0],
            b.len(),
            b.tau()[0]
        ))
        .into())
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<MetricsReport> {
    let fit = FitReportFile::read(&a.fit)?;
    let (reference, ref_c0) = load_reference(&a.reference)?;
    let grid = fit.grid()?;
    check_aligned(&grid, &reference.grid)?;
    let mut estimate = fit.fitted_curve.y.clone();
    if !(a.reference_scale.is_finite() && a.reference_scale >= 0.0) {
        return Err(CliError::Usage(format!("invalid --reference-scale {}", a.reference_scale)));
    }
    let mut reference_y: Vec<f64> = reference.y.iter().map(|v| v * a.reference_scale).collect();
    if a.subtract_background {
        let c0 = fit.background()?;
        let r0 = ref_c0.map_or(c0, |v| v * a.reference_scale);
        estimate.iter_mut().for_each(|v| *v -= c0);
        reference_y.iter_mut().for_each(|v| *v -= r0);
    }
    let report = metrics_report(&estimate, &reference_y, fit.metrics.total_photons)?;
    if let Some(path) = &a.output {
        write_atomic(path, to_json_pretty(&report)?.as_bytes())?;
    }
    Ok(report)
}

pub const PER_SEED_FILE: &str = "per_seed.csv";
pub const PARAM_STATS_FILE: &str = "param_stats.csv";
pub const METHODS_FILE: &str = "methods.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub schema_version: u32,
    pub reference: String,
    pub fixture: String,
    pub photon_budget: f64,
    pub time_scale: f64,
    pub seeds: usize,
    pub restarts: usize,
    pub guess_strategy: GuessStrategy,
    pub start_at_truth: bool,
    pub settings: OptimizerSettings,
    pub bound_overrides: Vec<BoundOverride>,
    pub lambda_grid: Vec<f64>,
    pub theta_true: Vec<g2fit_core::io::NamedValue>,
    pub methods: Vec<g2fit_core::bench::MethodStats>,
}

pub fn expand_methods(methods: &[MethodName], lambda_grid: &[f64]) -> CliResult<Vec<Method>> {
    let mut out = Vec::new();
    for m in methods {
        match m {
            MethodName::Map => {
                if lambda_grid.is_empty() {
                    return Err(CliError::Usage("empty --lambda-grid".into()));
                }
                for &lambda in lambda_grid {
                    if !(lambda.is_finite() && lambda >= 0.0) {
                        return Err(CliError::Usage(format!("invalid lambda {lambda}")));
                    }
                    out.push(Method::Map { lambda });
                }
            }
            MethodName::Mle => out.push(Method::Mle),
            MethodName::Lsq => out.push(Method::Lsq),
        }
    }
    out.dedup();
    Ok(out)
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        "nan".into()
    }
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> CliResult<EnsembleBenchmark> {
    let fx = a.fixture.load();
    let config = BenchmarkConfig {
        photon_budget: a.budget,
        seeds: (0..a.seeds).collect(),
        methods: expand_methods(&a.methods, &a.lambda_grid)?,
        plan: MultiStartPlan {
            restarts: a.restarts,
            guess_strategy: a.guess_strategy.into(),
            ..MultiStartPlan::default()
        },
        settings: OptimizerSettings::default(),
        start_at_truth: a.start_at_truth,
        bound_overrides: a.bounds.iter().map(|b| (b.name.clone(), b.lower, b.upper)).collect(),
        record_wall_time: a.record_wall_time,
    };
    let b = run_ensemble_benchmark(&fx, &config)?;
    fs::create_dir_all(&a.outdir).map_err(Error::from)?;

    let mut per_seed = String::from("seed,method,total_photons,converged,success,nrmse,objective_value");
    for n in &b.param_names {
        let _ = write!(per_seed, ",{n}_hat");
    }
    for n in &b.param_names {
        let _ = write!(per_seed, ",{n}_error");
    }
    if a.record_wall_time {
        per_seed.push_str(",wall_time");
    }
    per_seed.push('\n');
    for o in &b.per_seed {
        let _ = write!(
            per_seed,
            "{},{},{},{},{},{},{}",
            o.seed,
            o.method,
            o.total_photons,
            o.converged,
            o.success,
            o.nrmse.map(fmt_f).unwrap_or_else(|| "nan".into()),
            fmt_f(o.objective_value)
        );
        for v in o.theta_hat.iter().chain(&o.errors) {
            let _ = write!(per_seed, ",{}", fmt_f(*v));
        }
        if let Some(t) = o.wall_time {
            let _ = write!(per_seed, ",{t}");
        }
        per_seed.push('\n');
    }
    write_atomic(&a.outdir.join(PER_SEED_FILE), per_seed.as_bytes())?;

    let mut stats = String::from("method,param,truth,bias,variance,median_abs_error\n");
    let mut methods = String::from("method,n_seeds,n_fitted,success_rate,median_nrmse,failed\n");
    for m in &b.methods {
        for p in &m.params {
            let _ = writeln!(
                stats,
                "{},{},{},{},{},{}",
                m.method,
                p.name,
                fmt_f(p.truth),
                fmt_f(p.bias),
                fmt_f(p.variance),
                fmt_f(p.median_abs_error)
            );
        }
        let _ = writeln!(
            methods,
            "{},{},{},{},{},{}",
            m.method,
            m.n_seeds,
            m.n_fitted,
            fmt_f(m.success_rate),
            m.median_nrmse.map(fmt_f).unwrap_or_else(|| "nan".into()),
            m.failed
        );
    }
    write_atomic(&a.outdir.join(PARAM_STATS_FILE), stats.as_bytes())?;
    write_atomic(&a.outdir.join(METHODS_FILE), methods.as_bytes())?;

    let grid = &fx.params.grid;
    let summary = BenchmarkSummary {
        schema_version: SCHEMA_VERSION,
        reference: b.reference.clone(),
        fixture: b.fixture.clone(),
        photon_budget: b.photon_budget,
        time_scale: b.time_scale,
        seeds: b.seeds.len(),
        restarts: a.restarts,
        guess_strategy: config.plan.guess_strategy,
        start_at_truth: a.start_at_truth,
        settings: config.settings,
        bound_overrides: a.bounds.clone(),
        lambda_grid: a.lambda_grid.clone(),
        theta_true: ParamsFile::new(&fx.spec, &b.theta_true, *grid, None).theta,
        methods: b.methods.clone(),
    };
    write_atomic(&a.outdir.join(SUMMARY_FILE), to_json_pretty(&summary)?.as_bytes())?;
    Ok(b)
}
