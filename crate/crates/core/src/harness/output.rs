//! Summary rows and on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::algorithms::RunTrace;
use crate::error::Result;

/// One measured quantity at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub point: String,
    pub algorithm: String,
    pub k: usize,
    pub mu: f64,
    pub metric: String,
    pub empirical: f64,
    pub std_error: Option<f64>,
    pub mc_runs: usize,
    pub predicted: Option<f64>,
    pub diverged_runs: usize,
}

impl SummaryRow {
    /// `empirical / predicted`, when a nonzero prediction exists.
    pub fn ratio(&self) -> Option<f64> {
        self.predicted.filter(|p| *p != 0.0).map(|p| self.empirical / p)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryReport {
    pub experiment: String,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
    pub notes: Vec<String>,
}

impl SummaryReport {
    /// First row matching `point` and `metric`.
    pub fn row(&self, point: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.point == point && r.metric == metric)
    }

    pub fn rows_for<'a>(&'a self, metric: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric)
    }
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "point",
    "algorithm",
    "k",
    "mu",
    "metric",
    "empirical",
    "std_error",
    "mc_runs",
    "predicted",
    "ratio",
    "diverged_runs",
];

pub const TRACE_COLUMNS: [&str; 6] = ["run", "iter", "msd_network", "er_network", "disagreement", "grad_norm_sq"];

/// Shortest round-trip scientific notation.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_summary_csv(path: &Path, report: &SummaryReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.point.clone(),
            r.algorithm.clone(),
            r.k.to_string(),
            num(r.mu),
            r.metric.clone(),
            num(r.empirical),
            opt(r.std_error),
            r.mc_runs.to_string(),
            opt(r.predicted),
            opt(r.ratio()),
            r.diverged_runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Thinned per-run records followed by Monte-Carlo means (run = `mean`).
pub fn write_trace_csv(path: &Path, trace: &RunTrace, thinning: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_COLUMNS)?;
    for (run, iter, rec) in &trace.samples {
        w.write_record([
            run.to_string(),
            iter.to_string(),
            num(rec.msd),
            num(rec.er),
            num(rec.disagreement),
            num(rec.grad_norm_sq),
        ])?;
    }
    let last = trace.len().saturating_sub(1);
    for i in (0..trace.len()).filter(|i| i % thinning.max(1) == 0 || *i == last) {
        w.write_record([
            "mean".to_string(),
            i.to_string(),
            num(trace.msd[i]),
            num(trace.er[i]),
            num(trace.disagreement[i]),
            num(trace.grad_norm_sq[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn render_report(report: &SummaryReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", report.experiment);
    let _ = writeln!(s, "seed: {}", report.seed);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<40} {:<24} {:>4} {:>10} {:<22} {:>13} {:>11} {:>5} {:>13} {:>9} {:>4}",
        "point", "algorithm", "k", "mu", "metric", "empirical", "std_error", "runs", "predicted", "ratio", "div"
    );
    let f = |x: Option<f64>, prec: usize| x.map(|v| format!("{v:.prec$e}")).unwrap_or_else(|| "-".into());
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<40} {:<24} {:>4} {:>10.3e} {:<22} {:>13} {:>11} {:>5} {:>13} {:>9} {:>4}",
            r.point,
            r.algorithm,
            r.k,
            r.mu,
            r.metric,
            f(Some(r.empirical), 5),
            f(r.std_error, 3),
            r.mc_runs,
            f(r.predicted, 5),
            r.ratio().map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.diverged_runs
        );
    }
    if !report.notes.is_empty() {
        let _ = writeln!(s);
        for n in &report.notes {
            let _ = writeln!(s, "{n}");
        }
    }
    s
}

/// Writes `summary.csv`, `report.txt` and `<point>/trace.csv` under
/// `root/<experiment>_<seed>/`, returning that directory.
pub fn write_artifacts(
    root: &Path,
    report: &SummaryReport,
    traces: &[(String, &RunTrace)],
    thinning: usize,
) -> Result<PathBuf> {
    let dir = root.join(format!("{}_{}", report.experiment, report.seed));
    fs::create_dir_all(&dir)?;
    write_summary_csv(&dir.join("summary.csv"), report)?;
    fs::write(dir.join("report.txt"), render_report(report))?;
    for (label, trace) in traces {
        let sub = dir.join(label);
        fs::create_dir_all(&sub)?;
        write_trace_csv(&sub.join("trace.csv"), trace, thinning)?;
    }
    Ok(dir)
}
