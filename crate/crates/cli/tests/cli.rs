use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use g2fit_cli::{BenchmarkSummary, SimulationManifest, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE};
use g2fit_core::io::{parse_curve, read_histogram, FitReportFile};
use g2fit_core::metrics::MetricsReport;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_g2fit");

fn g2fit(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("G2FIT_THREADS").output().unwrap()
}

fn code(o: &Output) -> u8 {
    o.status.code().unwrap() as u8
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Thermal fixture scaled to `budget` photons, sampled once.
fn thermal_histogram(dir: &Path, budget: &str, seed: &str) -> PathBuf {
    let o = g2fit(dir, &["fixture", "thermal", "--budget", budget, "--output", "truth.json"]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let o = g2fit(
        dir,
        &["simulate", "--params", "truth.json", "--time-scale", "1", "--seed", seed, "--outdir", "sim"],
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    dir.join("sim/replicate_0000.csv")
}

#[test]
fn thermal_fit_writes_report_quickly() {
    let dir = TempDir::new().unwrap();
    let input = thermal_histogram(dir.path(), "500", "1");
    let started = std::time::Instant::now();
    let o = g2fit(
        dir.path(),
        &["fit", "--input", input.to_str().unwrap(), "--model", "thermal", "--seed", "4", "--output", "fit.json"],
    );
    assert!(started.elapsed().as_secs() < 60);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.starts_with("mle objective"), "{line}");
    assert!(line.contains("photons"), "{line}");
    let report = FitReportFile::read(&dir.path().join("fit.json")).unwrap();
    assert_eq!(report.parameters.len(), 3);
    assert_eq!(report.unit.as_deref(), Some("ns"));
    assert_eq!(report.parameters[2].unit.as_deref(), Some("ns"));
    assert!(report.provenance.wall_time.is_none());
    let bytes = fs::read(&input).unwrap();
    assert_eq!(report.provenance.input_digest, g2fit_core::io::digest(&bytes));
}

#[test]
fn lambda_zero_matches_default() {
    let dir = TempDir::new().unwrap();
    let input = thermal_histogram(dir.path(), "300", "2");
    let input = input.to_str().unwrap();
    let base = ["fit", "--input", input, "--model", "thermal", "--restarts", "8"];
    let a = g2fit(dir.path(), &[&base[..], &["--output", "a.json"]].concat());
    let b = g2fit(dir.path(), &[&base[..], &["--lambda", "0", "--output", "b.json"]].concat());
    assert_eq!(code(&a), EXIT_OK);
    assert_eq!(code(&b), EXIT_OK);
    assert_eq!(fs::read(dir.path().join("a.json")).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn map_fit_records_lambda() {
    let dir = TempDir::new().unwrap();
    let input = thermal_histogram(dir.path(), "300", "3");
    let o = g2fit(
        dir.path(),
        &[
            "fit", "--input", input.to_str().unwrap(), "--model", "thermal", "--lambda", "0.5", "--restarts", "4",
            "--output", "map.json",
        ],
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let r = FitReportFile::read(&dir.path().join("map.json")).unwrap();
    assert_eq!(r.objective.kind.to_string(), "map");
    assert_eq!(r.objective.weights, vec![0.5]);
}

#[test]
fn pulsed_fit_is_byte_identical_on_rerun() {
    let dir = TempDir::new().unwrap();
    let o = g2fit(dir.path(), &["fixture", "pulsed", "--budget", "500", "--output", "p.json"]);
    assert_eq!(code(&o), EXIT_OK);
    let o = g2fit(
        dir.path(),
        &["simulate", "--params", "p.json", "--time-scale", "1", "--seed", "9", "--outdir", "sim"],
    );
    assert_eq!(code(&o), EXIT_OK);
    for out in ["r1.json", "r2.json"] {
        let o = g2fit(
            dir.path(),
            &[
                "fit", "--input", "sim/replicate_0000.csv", "--model", "pulsed", "--seed", "42", "--restarts", "8",
                "--output", out,
            ],
        );
        assert!(matches!(code(&o), EXIT_OK | EXIT_NOT_CONVERGED), "{}", stderr(&o));
    }
    assert_eq!(fs::read(dir.path().join("r1.json")).unwrap(), fs::read(dir.path().join("r2.json")).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let input = thermal_histogram(dir.path(), "400", "5");
    let input = input.to_str().unwrap();
    let base = ["fit", "--input", input, "--model", "thermal", "--restarts", "8"];
    let a = g2fit(dir.path(), &[&base[..], &["--threads", "1", "--output", "a.json"]].concat());
    let b = Command::new(BIN)
        .args([&base[..], &["--output", "b.json"]].concat())
        .current_dir(dir.path())
        .env("G2FIT_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&a), EXIT_OK);
    assert_eq!(code(&b), EXIT_OK);
    assert_eq!(fs::read(dir.path().join("a.json")).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn non_convergence_exits_two_with_report() {
    let dir = TempDir::new().unwrap();
    let input = thermal_histogram(dir.path(), "500", "6");
    let o = g2fit(
        dir.path(),
        &[
            "fit", "--input", input.to_str().unwrap(), "--model", "thermal", "--restarts", "3", "--max-iters", "1",
            "--output", "r.json",
        ],
    );
    assert_eq!(code(&o), EXIT_NOT_CONVERGED, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let r = FitReportFile::read(&dir.path().join("r.json")).unwrap();
    assert!(!r.restarts.converged);
}

#[test]
fn usage_errors_exit_64() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("h.csv"), "tau,count\n0,3\n1,5\n").unwrap();
    let cases: [&[&str]; 4] = [
        &["fit", "--input", "h.csv", "--model", "lorentzian", "--output", "r.json"],
        &["simulate", "--time-scale", "1", "--outdir", "out"],
        &["benchmark", "--fixture", "pulsed", "--budget", "10", "--methods", "mle,ridge", "--outdir", "b"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = g2fit(dir.path(), args);
        assert_eq!(code(&o), EXIT_USAGE, "{args:?}: {}", stderr(&o));
    }
    let o = g2fit(dir.path(), &["--help"]);
    assert_eq!(code(&o), EXIT_OK);
    assert!(stdout(&o).contains("benchmark"));
}

#[test]
fn input_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("frac.csv"), "tau,count\n0.5,2.5\n").unwrap();
    fs::write(dir.path().join("empty.csv"), "tau,count\n").unwrap();
    for input in ["frac.csv", "empty.csv", "missing.csv"] {
        let o = g2fit(dir.path(), &["fit", "--input", input, "--model", "thermal", "--output", "r.json"]);
        assert_eq!(code(&o), EXIT_INPUT, "{input}");
        assert!(!dir.path().join("r.json").exists());
    }
    let o = g2fit(dir.path(), &["fit", "--input", "frac.csv", "--model", "thermal", "--output", "r.json"]);
    let msg = stderr(&o);
    assert!(msg.contains("row 1") && msg.contains("fractional"), "{msg}");
}

#[test]
fn simulate_zero_time_scale_and_rerun() {
    let dir = TempDir::new().unwrap();
    let o = g2fit(dir.path(), &["fixture", "pulsed", "--output", "p.json"]);
    assert_eq!(code(&o), EXIT_OK);
    let o = g2fit(
        dir.path(),
        &["simulate", "--params", "p.json", "--time-scale", "0", "--replicates", "3", "--outdir", "zero"],
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    for k in 0..3 {
        let h = read_histogram(&dir.path().join(format!("zero/replicate_{k:04}.csv"))).unwrap();
        assert_eq!(h.total_photons(), 0);
        assert_eq!(h.len(), 256);
    }
    for out in ["x", "y"] {
        let o = g2fit(
            dir.path(),
            &["simulate", "--params", "p.json", "--time-scale", "20", "--replicates", "4", "--seed", "8", "--outdir", out],
        );
        assert_eq!(code(&o), EXIT_OK);
    }
    for f in ["manifest.json", "replicate_0000.csv", "replicate_0003.csv"] {
        assert_eq!(fs::read(dir.path().join("x").join(f)).unwrap(), fs::read(dir.path().join("y").join(f)).unwrap());
    }
    let m: SimulationManifest = serde_json::from_slice(&fs::read(dir.path().join("x/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.replicates.len(), 4);
    assert_eq!(m.seed, 8);
    let totals: Vec<u64> = m.replicates.iter().map(|r| r.total_photons).collect();
    for (k, r) in m.replicates.iter().enumerate() {
        let h = read_histogram(&dir.path().join("x").join(&r.file)).unwrap();
        assert_eq!(h.total_photons(), totals[k]);
        assert_eq!(r.substream_seed, g2fit_core::sampler::substream_seed(8, k as u64));
    }
}

#[test]
fn simulated_totals_follow_time_scale() {
    let dir = TempDir::new().unwrap();
    let o = g2fit(dir.path(), &["fixture", "pulsed", "--budget", "500", "--output", "p.json"]);
    assert_eq!(code(&o), EXIT_OK);
    for t in ["1", "5.2", "19.2"] {
        let out = format!("t{t}");
        let o = g2fit(
            dir.path(),
            &["simulate", "--params", "p.json", "--time-scale", t, "--replicates", "20", "--seed", "3", "--outdir", &out],
        );
        assert_eq!(code(&o), EXIT_OK);
        let m: SimulationManifest = serde_json::from_slice(&fs::read(dir.path().join(&out).join("manifest.json")).unwrap()).unwrap();
        let expected = 500.0 * t.parse::<f64>().unwrap();
        assert!((m.expected_total_photons - expected).abs() < 1e-6 * expected);
        // mean of 20 Poisson totals
        let se = (expected / 20.0).sqrt();
        assert!((m.mean_total_photons - expected).abs() < 4.0 * se, "T={t}: {}", m.mean_total_photons);
    }
}

#[test]
fn simulate_from_report() {
    let dir = TempDir::new().unwrap();
    let input = thermal_histogram(dir.path(), "500", "7");
    let o = g2fit(
        dir.path(),
        &["fit", "--input", input.to_str().unwrap(), "--model", "thermal", "--restarts", "4", "--output", "fit.json"],
    );
    assert_eq!(code(&o), EXIT_OK);
    let o = g2fit(
        dir.path(),
        &["simulate", "--report", "fit.json", "--time-scale", "2", "--replicates", "2", "--outdir", "pred"],
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let h = read_histogram(&dir.path().join("pred/replicate_0001.csv")).unwrap();
    assert_eq!(h.unit(), Some("ns"));
}

#[test]
fn evaluate_against_itself_and_references() {
    let dir = TempDir::new().unwrap();
    let input = thermal_histogram(dir.path(), "2000", "8");
    let o = g2fit(
        dir.path(),
        &[
            "fit", "--input", input.to_str().unwrap(), "--model", "thermal", "--restarts", "4", "--output", "fit.json",
            "--curve-csv", "fit.csv",
        ],
    );
    assert_eq!(code(&o), EXIT_OK);
    let curve = parse_curve(&fs::read_to_string(dir.path().join("fit.csv")).unwrap()).unwrap();
    assert_eq!(curve.y.len(), 256);

    for reference in ["fit.json", "fit.csv"] {
        let o = g2fit(dir.path(), &["evaluate", "--fit", "fit.json", "--reference", reference, "--output", "m.json"]);
        assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
        assert!(stdout(&o).starts_with("nrmse 0.000000"), "{}", stdout(&o));
        let m: MetricsReport = serde_json::from_slice(&fs::read(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(m.nrmse, 0.0);
    }

    let o = g2fit(dir.path(), &["evaluate", "--fit", "fit.json", "--reference", "truth.json", "--output", "t.json"]);
    assert_eq!(code(&o), EXIT_OK);
    let plain: MetricsReport = serde_json::from_slice(&fs::read(dir.path().join("t.json")).unwrap()).unwrap();
    assert!(plain.nrmse > 0.0 && plain.nrmse < 0.2, "{plain:?}");
    let o = g2fit(
        dir.path(),
        &["evaluate", "--fit", "fit.json", "--reference", "truth.json", "--subtract-background", "--output", "s.json"],
    );
    assert_eq!(code(&o), EXIT_OK);
    let sub: MetricsReport = serde_json::from_slice(&fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(sub.total_photons, plain.total_photons);
    assert_ne!(sub.nrmse, plain.nrmse);

    let flat: String = std::iter::once("tau,y\n".to_string())
        .chain((0..256).map(|i| format!("{},2\n", i as f64 - 128.0)))
        .collect();
    fs::write(dir.path().join("flat.csv"), flat).unwrap();
    let o = g2fit(dir.path(), &["evaluate", "--fit", "fit.json", "--reference", "flat.csv"]);
    assert_eq!(code(&o), EXIT_INPUT);
    assert!(stderr(&o).contains("normalization"), "{}", stderr(&o));

    fs::write(dir.path().join("short.csv"), "tau,y\n0,1\n1,2\n").unwrap();
    let o = g2fit(dir.path(), &["evaluate", "--fit", "fit.json", "--reference", "short.csv"]);
    assert_eq!(code(&o), EXIT_INPUT);
    assert!(stderr(&o).contains("aligned"), "{}", stderr(&o));
}

#[test]
fn benchmark_smoke_and_pairing() {
    let dir = TempDir::new().unwrap();
    let run = |methods: &str, out: &str| {
        g2fit(
            dir.path(),
            &[
                "benchmark", "--fixture", "thermal", "--budget", "500", "--seeds", "4", "--methods", methods,
                "--lambda-grid", "0,1", "--restarts", "3", "--outdir", out,
            ],
        )
    };
    let o = run("map,mle,lsq", "all");
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"), "few seeds should warn");
    assert!(stdout(&o).contains("success"));
    for f in ["per_seed.csv", "param_stats.csv", "methods.csv", "summary.json"] {
        assert!(dir.path().join("all").join(f).exists(), "{f}");
    }
    let summary: BenchmarkSummary = serde_json::from_slice(&fs::read(dir.path().join("all/summary.json")).unwrap()).unwrap();
    let labels: Vec<&str> = summary.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(labels, ["map(lambda=0)", "map(lambda=1)", "mle", "lsq"]);
    assert!(summary.reference.contains("ground truth"));
    for m in &summary.methods {
        assert!((0.0..=1.0).contains(&m.success_rate));
        assert!(m.wall_time.is_none());
    }

    let o = run("lsq", "lsq_only");
    assert_eq!(code(&o), EXIT_OK);
    let rows = |dir: &Path, label: &str| -> Vec<String> {
        fs::read_to_string(dir.join("per_seed.csv"))
            .unwrap()
            .lines()
            .filter(|l| l.split(',').nth(1) == Some(label))
            .map(str::to_string)
            .collect()
    };
    let paired = rows(&dir.path().join("all"), "lsq");
    assert_eq!(paired.len(), 4);
    assert_eq!(paired, rows(&dir.path().join("lsq_only"), "lsq"));
    // MAP at zero weight optimizes the same function as MLE from the same guesses
    let strip = |r: &String| r.split(',').skip(2).collect::<Vec<_>>().join(",");
    let map0: Vec<String> = rows(&dir.path().join("all"), "map(lambda=0)").iter().map(strip).collect();
    let mle: Vec<String> = rows(&dir.path().join("all"), "mle").iter().map(strip).collect();
    assert_eq!(map0, mle);
}

#[test]
fn benchmark_with_thirty_seeds_reports_success_rate() {
    let dir = TempDir::new().unwrap();
    let o = g2fit(
        dir.path(),
        &[
            "benchmark", "--fixture", "pulsed", "--budget", "500", "--seeds", "30", "--methods", "mle", "--restarts",
            "2", "--bound", "lambda=22.5:27.5", "--record-wall-time", "--outdir", "b",
        ],
    );
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    assert!(!stderr(&o).contains("warning"));
    let summary: BenchmarkSummary = serde_json::from_slice(&fs::read(dir.path().join("b/summary.json")).unwrap()).unwrap();
    assert_eq!(summary.seeds, 30);
    assert_eq!(summary.methods.len(), 1);
    assert!(summary.methods[0].wall_time.is_some());
    assert!(stdout(&o).starts_with("mle success"));
}

#[test]
fn fixture_budget_scales_amplitudes() {
    let dir = TempDir::new().unwrap();
    let o = g2fit(dir.path(), &["fixture", "thermal", "--budget", "1000", "--output", "t.json"]);
    assert_eq!(code(&o), EXIT_OK);
    let p: g2fit_core::io::ParamsFile = serde_json::from_slice(&fs::read(dir.path().join("t.json")).unwrap()).unwrap();
    let total: f64 = p.curve().unwrap().y.iter().sum();
    assert!((total - 1000.0).abs() < 1e-9 * 1000.0);
    let o = g2fit(dir.path(), &["fixture", "thermal", "--budget", "-3", "--output", "t.json"]);
    assert_eq!(code(&o), EXIT_USAGE);
}
