use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use nonlocal::kernel::{FamilySpec, KernelSpec, StretchSpec};
use nonlocal_cli::report::RateError;
use nonlocal_cli::{fit_rate, run_config, CliError, ExperimentConfig};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"))
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&fs::read_to_string(config_path(name)).unwrap()).unwrap()
}

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nonlocal")).args(args).output().unwrap()
}

#[test]
fn kernel_spec_survives_a_toml_round_trip() {
    let mut cfg = load("sigma-derivatives");
    cfg.kernel = Some(KernelSpec {
        dim: 2,
        family: FamilySpec::FractionalTruncated { sigma: 0.3, cutoff: Some(0.75) },
        amplitude: 2.0,
        scale: 0.5,
        stretch: Some(StretchSpec { factors: vec![1.0, 3.0], angle: 0.2 }),
    });
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
}

#[test]
fn every_shipped_config_parses_and_names_a_registered_experiment() {
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::parse(&fs::read_to_string(&path).unwrap()).unwrap();
        let exp = nonlocal_cli::experiments::find(&cfg.experiment).unwrap();
        cfg.validate(exp.needs).unwrap();
    }
    assert_eq!(nonlocal_cli::experiments::REGISTRY.len(), 12);
}

#[test]
fn fit_rate_recovers_exact_power_laws() {
    let eps = [0.4, 0.2, 0.1, 0.05];
    let linear: Vec<(f64, f64)> = eps.iter().map(|&e| (e, 3.0 * e)).collect();
    let quadratic: Vec<(f64, f64)> = eps.iter().map(|&e| (e, 0.7 * e * e)).collect();
    let one = fit_rate(&linear).unwrap();
    assert!((one.slope - 1.0).abs() < 1e-10);
    assert!(one.lower <= one.slope && one.slope <= one.upper);
    assert!((fit_rate(&quadratic).unwrap().slope - 2.0).abs() < 1e-10);
}

#[test]
fn fit_rate_is_undefined_for_short_or_nonpositive_series() {
    assert_eq!(fit_rate(&[(0.1, 0.1), (0.05, 0.05)]), Err(RateError::TooFewPoints(2)));
    assert!(matches!(fit_rate(&[(0.4, 0.1), (0.2, 0.0), (0.1, 0.02)]), Err(RateError::NonpositiveGap { .. })));
}

#[test]
fn rejects_bad_eps_lists() {
    let mut cfg = load("perimeter-limit");
    cfg.eps.clear();
    assert!(matches!(run_config(&cfg), Err(CliError::Invalid(m)) if m.contains("empty")));
    cfg.eps = vec![0.1, 0.2, 0.05];
    assert!(matches!(run_config(&cfg), Err(CliError::Invalid(m)) if m.contains("decreasing")));
}

#[test]
fn rejects_missing_blocks() {
    let mut cfg = load("coarea");
    cfg.kernel = None;
    assert!(matches!(run_config(&cfg), Err(CliError::Invalid(m)) if m.contains("[kernel]")));
}

#[test]
fn parse_errors_carry_the_line_number() {
    let text = "experiment = \"coarea\"\n\n[kernel]\ndim = \"two\"\n";
    match ExperimentConfig::parse(text) {
        Err(CliError::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "experiment = \"no-such-thing\"\n").unwrap();
    let out = run_binary(&["run", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown experiment"));
}

#[test]
fn list_prints_the_registry() {
    let out = run_binary(&["run", "--list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.lines().any(|l| l == "flow-monitors"));
}

#[test]
fn perimeter_limit_writes_four_rows_and_a_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_binary(&["run", config_path("perimeter-limit").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("perimeter-limit_perimeter.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("eps,measured,reference,abs_gap,rel_gap"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    // Every float carries 17 significant digits.
    assert!(rows[0].split(',').all(|f| f.split('e').next().unwrap().trim_start_matches('-').len() == 18));
    let rate = fs::read_to_string(dir.path().join("perimeter-limit_perimeter_rate.csv")).unwrap();
    let slope: f64 = rate.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(slope.is_finite());
    assert!(fs::read_to_string(dir.path().join("perimeter-limit_summary.txt")).unwrap().starts_with("PASS"));
}

#[test]
fn same_seed_gives_identical_bytes_for_any_worker_count() {
    let run = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = run_binary(&["run", config_path("submodularity").to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--workers", workers]);
        assert!(out.status.success());
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let first = run("1");
    assert!(!first.is_empty());
    assert_eq!(first, run("1"));
    assert_eq!(first, run("3"));
}
