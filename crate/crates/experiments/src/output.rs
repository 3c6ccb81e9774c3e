//! Result rows, per-group summaries and CSV emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::ExperimentError;

/// One measurement. `setting` carries the swept parameter (stream count,
/// temperature, initialization) as `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub setting: String,
    pub rounds: usize,
    pub trial: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Empty, or a reason the value is degenerate or missing.
    pub flag: String,
}

impl ResultRow {
    fn key(&self) -> (&str, &str, &str, usize, usize, &str) {
        (&self.experiment, &self.method, &self.setting, self.rounds, self.trial, &self.metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub method: String,
    pub setting: String,
    pub rounds: usize,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
    pub flagged: usize,
}

/// Sorts rows by `(experiment, method, setting, rounds, trial, metric)`.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
}

/// Mean and standard error per `(experiment, method, setting, rounds,
/// metric)`, over rows with a finite value and no flag.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (String, String, String, usize, String);
    let mut groups: BTreeMap<Key, (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let e = groups
            .entry((r.experiment.clone(), r.method.clone(), r.setting.clone(), r.rounds, r.metric.clone()))
            .or_default();
        if r.flag.is_empty() && r.value.is_finite() {
            e.0.push(r.value);
        } else {
            e.1 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((experiment, method, setting, rounds, metric), (vals, flagged))| {
            let (mean, stderr) = mean_stderr(&vals);
            SummaryRow {
                experiment,
                method,
                setting,
                rounds,
                metric,
                count: vals.len(),
                mean,
                stderr,
                flagged,
            }
        })
        .collect()
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `c` minimizing `sum (y - c / T)^2`.
pub fn fit_inverse(ts: &[f64], y: &[f64]) -> f64 {
    let num: f64 = ts.iter().zip(y).map(|(t, v)| v / t).sum();
    let den: f64 = ts.iter().map(|t| 1.0 / (t * t)).sum();
    num / den
}

fn io_err(path: &Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Everything one experiment run emits.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    /// `key = value` lines for fit.txt; empty means no file.
    pub fit: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }

    pub fn fit_text(&self) -> String {
        self.fit.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes results.csv, summary.csv and (when present) fit.txt into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let results = dir.join("results.csv");
        let summary = dir.join("summary.csv");
        write_csv(&results, &self.rows)?;
        write_csv(&summary, &self.summary())?;
        let mut written = vec![results, summary];
        if !self.fit.is_empty() {
            let fit = dir.join("fit.txt");
            let mut f = std::fs::File::create(&fit).map_err(|e| io_err(&fit, e))?;
            f.write_all(self.fit_text().as_bytes()).map_err(|e| io_err(&fit, e))?;
            written.push(fit);
        }
        Ok(written)
    }
}
