//! Per-round CSV output and side-by-side run summaries.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::federation::RoundMetrics;
use crate::Error;

pub const HEADER: &str = "round,train_loss,test_accuracy,weiszfeld_iters,distorted_devices,decode_failures";

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Plain decimal notation with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = |mag: i32| (digits as i32 - 1 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals(magnitude), x);
    // rounding can carry into the next decade, e.g. 9.9999999996 -> 10.0000000
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded.abs() >= 10f64.powi(magnitude + 1) {
        format!("{:.*}", decimals(magnitude + 1), x)
    } else {
        s
    }
}

pub fn format_row(m: &RoundMetrics) -> String {
    format!(
        "{},{},{},{},{},{}",
        m.round,
        format_sig(m.train_loss, SIGNIFICANT_DIGITS),
        format_sig(m.test_accuracy, SIGNIFICANT_DIGITS),
        m.weiszfeld_iters,
        m.distorted_devices,
        m.decode_failures
    )
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Streams rows to a CSV file, flushing after each.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut writer = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        writer.line(HEADER)?;
        Ok(writer)
    }

    fn line(&mut self, text: &str) -> Result<(), Error> {
        let path = &self.path;
        writeln!(self.out, "{text}").map_err(io_err(path))?;
        self.out.flush().map_err(io_err(path))
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<(), Error> {
        self.line(&format_row(m))
    }
}

/// Writes a whole metrics series to `path`.
pub fn emit_metrics<'a, I>(rows: I, path: &Path) -> Result<(), Error>
where
    I: IntoIterator<Item = &'a RoundMetrics>,
{
    let mut writer = MetricsWriter::create(path)?;
    for row in rows {
        writer.write(row)?;
    }
    Ok(())
}

/// Headline numbers of one metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Rounds completed when test accuracy first reached the threshold.
    pub rounds_to_threshold: Option<usize>,
}

pub fn summarize_csv(path: &Path, threshold: f64) -> Result<RunSummary, Error> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != HEADER {
        return Err(Error::Metrics(format!(
            "{}: header mismatch: {header:?}",
            path.display()
        )));
    }
    let mut summary = RunSummary {
        label: path.display().to_string(),
        rounds: 0,
        final_accuracy: f64::NAN,
        best_accuracy: f64::NAN,
        rounds_to_threshold: None,
    };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::Metrics(format!("{}: line {}: malformed row {line:?}", path.display(), i + 2));
        if cols.len() != 6 {
            return Err(bad());
        }
        let accuracy: f64 = cols[2].parse().map_err(|_| bad())?;
        summary.rounds += 1;
        summary.final_accuracy = accuracy;
        if !(summary.best_accuracy >= accuracy) {
            summary.best_accuracy = accuracy;
        }
        if summary.rounds_to_threshold.is_none() && accuracy >= threshold {
            summary.rounds_to_threshold = Some(summary.rounds);
        }
    }
    Ok(summary)
}

/// Plain-text table with one line per run.
pub fn compare_runs(paths: &[PathBuf], threshold: f64) -> Result<String, Error> {
    let summaries = paths
        .iter()
        .map(|p| summarize_csv(p, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    let width = summaries
        .iter()
        .map(|s| s.label.chars().count())
        .chain(std::iter::once(3))
        .max()
        .unwrap_or(3);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>9}  {:>9}  {:>9}",
        "run",
        "rounds",
        "final",
        "best",
        format!("to {threshold}")
    );
    for s in &summaries {
        let reached = s
            .rounds_to_threshold
            .map_or_else(|| "\u{2014}".to_string(), |r| r.to_string());
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>9.4}  {:>9.4}  {:>9}",
            s.label, s.rounds, s.final_accuracy, s.best_accuracy, reached
        );
    }
    Ok(out)
}
