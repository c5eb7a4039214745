//! Report rows, pass/fail checks, rate fits and CSV tables.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::CliError;

/// `(x, measured, reference)` with the gap measured against `scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportRow {
    pub x: f64,
    pub measured: f64,
    pub reference: f64,
    pub scale: f64,
}

impl ReportRow {
    pub fn new(x: f64, measured: f64, reference: f64) -> Self {
        Self { x, measured, reference, scale: reference.abs() }
    }

    pub fn scaled(x: f64, measured: f64, reference: f64, scale: f64) -> Self {
        Self { x, measured, reference, scale }
    }

    pub fn abs_gap(&self) -> f64 {
        (self.measured - self.reference).abs()
    }

    pub fn rel_gap(&self) -> f64 {
        self.abs_gap() / self.scale
    }
}

/// Log-log slope of the relative gap against `x`, with a 95% band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

#[derive(Clone, Debug, thiserror::Error, PartialEq)]
pub enum RateError {
    #[error("a rate needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("gap {gap:e} at {x:e} is not positive")]
    NonpositiveGap { x: f64, gap: f64 },
}

/// Least-squares slope of `log(gap)` against `log(x)`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, RateError> {
    let n = points.len();
    if n < 3 {
        return Err(RateError::TooFewPoints(n));
    }
    if let Some(&(x, gap)) = points.iter().find(|(x, g)| !(*g > 0.0 && *x > 0.0)) {
        return Err(RateError::NonpositiveGap { x, gap });
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, g)| (x.ln(), g.ln())).collect();
    let nf = n as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::INFINITY);
    Ok(RateFit { slope, lower: slope - t * se, upper: slope + t * se, points: n })
}

/// One acceptance line.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

/// A measured series against its reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    /// Header of the first column, `eps` or `t` for sweeps.
    pub x_name: String,
    pub rows: Vec<ReportRow>,
    pub rate: Option<Result<RateFit, RateError>>,
}

impl ExperimentReport {
    pub fn new(name: &str, x_name: &str, rows: Vec<ReportRow>) -> Self {
        Self { name: name.into(), x_name: x_name.into(), rows, rate: None }
    }

    pub fn with_rate(mut self) -> Self {
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.x, r.rel_gap())).collect();
        self.rate = Some(fit_rate(&pts));
        self
    }

    pub fn last_rel_gap(&self) -> f64 {
        self.rows.last().map_or(f64::INFINITY, ReportRow::rel_gap)
    }

    pub fn max_rel_gap(&self) -> f64 {
        self.rows.iter().map(ReportRow::rel_gap).fold(0.0, f64::max)
    }

    pub fn table(&self) -> Table {
        let header = [self.x_name.as_str(), "measured", "reference", "abs_gap", "rel_gap"];
        let rows = self.rows.iter().map(|r| vec![r.x, r.measured, r.reference, r.abs_gap(), r.rel_gap()].into_iter().map(Cell::Num).collect());
        Table::new(&self.name, &header, rows.collect())
    }

    pub fn rate_table(&self) -> Option<Table> {
        let rate = self.rate.as_ref()?;
        let row = match rate {
            Ok(f) => vec![Cell::Num(f.slope), Cell::Num(f.lower), Cell::Num(f.upper), Cell::Int(f.points as u64), Cell::Text(String::new())],
            Err(e) => vec![Cell::Empty, Cell::Empty, Cell::Empty, Cell::Int(self.rows.len() as u64), Cell::Text(e.to_string())],
        };
        Some(Table::new(&format!("{}_rate", self.name), &["slope", "lower95", "upper95", "points", "undefined_reason"], vec![row]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

/// A CSV file: name without extension, header and rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str], rows: Vec<Vec<Cell>>) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows }
    }

    pub fn numeric(name: &str, header: &[&str], rows: Vec<Vec<f64>>) -> Self {
        Self::new(name, header, rows.into_iter().map(|r| r.into_iter().map(Cell::Num).collect()).collect())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Everything one experiment produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub reports: Vec<ExperimentReport>,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn all_tables(&self) -> Vec<Table> {
        let mut out: Vec<Table> = Vec::new();
        for r in &self.reports {
            out.push(r.table());
            out.extend(r.rate_table());
        }
        out.extend(self.tables.iter().cloned());
        out
    }

    pub fn summary(&self, experiment: &str) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!("{} {experiment} {}: {}\n", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        for r in &self.reports {
            match &r.rate {
                Some(Ok(f)) => s.push_str(&format!("RATE {experiment} {}: slope {:.4} in [{:.4}, {:.4}] from {} points\n", r.name, f.slope, f.lower, f.upper, f.points)),
                Some(Err(e)) => s.push_str(&format!("RATE {experiment} {}: undefined, {e}\n", r.name)),
                None => {}
            }
        }
        s
    }
}
