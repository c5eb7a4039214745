//! Configuration-driven experiment runner for the `nonlocal` library.

pub mod config;
pub mod experiments;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use report::{fit_rate, Outcome, RateFit};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown experiment {0:?}; run with --list to see the registry")]
    UnknownExperiment(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] nonlocal::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Parses, validates and runs a config, returning the experiment outcome.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = experiments::find(&cfg.experiment).ok_or_else(|| CliError::UnknownExperiment(cfg.experiment.clone()))?;
    cfg.validate(exp.needs)?;
    (exp.run)(cfg)
}

/// Writes every table as `<experiment>_<table>.csv` plus `<experiment>_summary.txt`.
pub fn write_outcome(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in outcome.all_tables() {
        let path = dir.join(format!("{}_{}.csv", cfg.experiment, t.name));
        fs::write(&path, t.to_csv()?)?;
        written.push(path);
    }
    let path = dir.join(format!("{}_summary.txt", cfg.experiment));
    fs::write(&path, outcome.summary(&cfg.experiment))?;
    written.push(path);
    Ok(written)
}

/// Reads and runs a config file, writing artifacts under `out` or the configured directory.
pub fn run_file(path: &Path, out: Option<&Path>) -> Result<(ExperimentConfig, Outcome, PathBuf), CliError> {
    let text = fs::read_to_string(path)?;
    let cfg = ExperimentConfig::parse(&text)?;
    let outcome = run_config(&cfg)?;
    let dir = match (out, &cfg.output) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(o)) => PathBuf::from(&o.dir),
        (None, None) => PathBuf::from("out"),
    };
    write_outcome(&cfg, &outcome, &dir)?;
    Ok((cfg, outcome, dir))
}
