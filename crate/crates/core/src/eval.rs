//! Total-recall metrics over run logs.
//!
//! Metrics are defined over the review sequence: "P@100" is precision after
//! 100 documents have been shown, not a rank cutoff. Internally every value
//! is a fraction in `[0, 1]`; [`percent`] renders it for people.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runlog::RunLog;

pub const DEFAULT_CUTOFFS: [usize; 3] = [10, 100, 1000];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("no reports to aggregate")]
    NoReports,
}

fn relevant_in_prefix(log: &RunLog, n: usize) -> usize {
    log.entries()
        .iter()
        .take(n)
        .filter(|e| e.judgment.is_relevant())
        .count()
}

/// Relevant documents among the first `n` shown, divided by `n` (a short log
/// still divides by `n`). `n = 0` yields 0.
pub fn precision_at(log: &RunLog, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    relevant_in_prefix(log, n) as f64 / n as f64
}

/// Relevant documents among the first `n` shown, divided by `r_t`.
/// With `r_t = 0` recall is vacuously 1.
pub fn recall_at(log: &RunLog, n: usize, r_t: usize) -> f64 {
    if r_t == 0 {
        return 1.0;
    }
    relevant_in_prefix(log, n) as f64 / r_t as f64
}

pub fn budget_4r_1000(r_t: usize) -> usize {
    4 * r_t + 1000
}

pub fn recall_at_4r_1000(log: &RunLog, r_t: usize) -> f64 {
    recall_at(log, budget_4r_1000(r_t), r_t)
}

/// `(i, recall after i documents)` for every iteration `i` in the log.
pub fn gain_curve(log: &RunLog, r_t: usize) -> Vec<(usize, f64)> {
    let mut found = 0usize;
    log.entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            found += usize::from(e.judgment.is_relevant());
            let recall = if r_t == 0 { 1.0 } else { found as f64 / r_t as f64 };
            (i + 1, recall)
        })
        .collect()
}

/// Serializes `usize` map keys as strings so reports stay valid JSON objects.
mod cutoff_map {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<String, f64>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub topic_id: String,
    pub r_t: usize,
    pub shown: usize,
    pub relevant_found: usize,
    #[serde(with = "cutoff_map")]
    pub p_at: BTreeMap<usize, f64>,
    #[serde(with = "cutoff_map")]
    pub r_at: BTreeMap<usize, f64>,
    pub recall_at_4r_1000: f64,
    /// Set when `r_t = 0` and recall is defined as 1.
    #[serde(default)]
    pub vacuous_recall: bool,
    #[serde(default)]
    pub gain_curve: Vec<(usize, f64)>,
}

impl MetricsReport {
    pub fn compute(topic_id: &str, log: &RunLog, r_t: usize, cutoffs: &[usize]) -> Self {
        MetricsReport {
            topic_id: topic_id.to_string(),
            r_t,
            shown: log.len(),
            relevant_found: relevant_in_prefix(log, log.len()),
            p_at: cutoffs.iter().map(|&n| (n, precision_at(log, n))).collect(),
            r_at: cutoffs.iter().map(|&n| (n, recall_at(log, n, r_t))).collect(),
            recall_at_4r_1000: recall_at_4r_1000(log, r_t),
            vacuous_recall: r_t == 0,
            gain_curve: gain_curve(log, r_t),
        }
    }

    /// Named scalar metrics, e.g. `"P@100"` and `"recall_at_4r_1000"`.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.p_at {
            out.insert(format!("P@{k}"), *v);
        }
        for (k, v) in &self.r_at {
            out.insert(format!("R@{k}"), *v);
        }
        out.insert("recall_at_4r_1000".to_string(), self.recall_at_4r_1000);
        out
    }

    pub fn write_gain_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "iteration,recall")?;
        for (i, r) in &self.gain_curve {
            writeln!(out, "{i},{r}")?;
        }
        Ok(())
    }
}

/// Cross-topic arithmetic means of every scalar metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub topics: usize,
    pub means: BTreeMap<String, f64>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<Summary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.metrics() {
            let slot = sums.entry(name).or_insert((0.0, 0));
            slot.0 += v;
            slot.1 += 1;
        }
    }
    Ok(Summary {
        topics: reports.len(),
        means: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    })
}

/// Arithmetic mean of a column of values.
pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Two-decimal percent rendering: `0.9650 -> "96.50"`.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ReportLine {
    Topic(MetricsReport),
    Summary(Summary),
}

/// Writes one JSON object per topic followed by the summary object.
pub fn write_report_file(reports: &[MetricsReport], summary: &Summary, mut out: impl Write) -> io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, &ReportLine::Topic(r.clone()))?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut out, &ReportLine::Summary(summary.clone()))?;
    out.write_all(b"\n")
}

pub fn save_report_file(reports: &[MetricsReport], summary: &Summary, path: &Path) -> Result<(), EvalError> {
    let io_err = |e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_report_file(reports, summary, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

/// Reads the per-topic reports of a report file; summary lines are skipped.
pub fn read_report_file(reader: impl BufRead, source_name: &str) -> Result<Vec<MetricsReport>, EvalError> {
    let mut reports = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io {
            path: PathBuf::from(source_name),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine = serde_json::from_str(&line).map_err(|e| EvalError::Malformed {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if let ReportLine::Topic(r) = parsed {
            reports.push(r);
        }
    }
    Ok(reports)
}

pub fn load_report_file(path: &Path) -> Result<Vec<MetricsReport>, EvalError> {
    let file = File::open(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    read_report_file(BufReader::new(file), &path.display().to_string())
}

/// Per-topic metric columns on the percent scale, as printed in result tables.
///
/// Header `topic<TAB>name...`, then one row per topic. A cell of at most 1 is
/// a fraction that slipped into a percent column (e.g. `1.00` for 100%) and
/// is scaled by 100.
#[derive(Debug, Clone, PartialEq)]
pub struct PercentTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl PercentTable {
    pub fn read(reader: impl BufRead, source_name: &str) -> Result<Self, EvalError> {
        let bad = |line: usize, message: String| EvalError::Malformed {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| EvalError::Io {
                path: PathBuf::from(source_name),
                source: e,
            })?,
            None => return Err(bad(1, "missing header".into())),
        };
        let columns: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
        if columns.is_empty() {
            return Err(bad(1, "header needs a topic column and at least one metric".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| EvalError::Io {
                path: PathBuf::from(source_name),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != columns.len() + 1 {
                return Err(bad(i + 1, format!("expected {} fields, found {}", columns.len() + 1, fields.len())));
            }
            let values = fields[1..]
                .iter()
                .map(|f| {
                    let v: f64 = f.trim().parse().map_err(|_| bad(i + 1, format!("bad value {f:?}")))?;
                    Ok(if v <= 1.0 { v * 100.0 } else { v })
                })
                .collect::<Result<Vec<f64>, EvalError>>()?;
            rows.push((fields[0].to_string(), values));
        }
        Ok(PercentTable { columns, rows })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let file = File::open(path).map_err(|e| EvalError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::read(BufReader::new(file), &path.display().to_string())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[k]).collect())
    }

    /// Column means, in column order.
    pub fn means(&self) -> Vec<(String, f64)> {
        self.columns
            .iter()
            .map(|c| (c.clone(), mean(&self.column(c).unwrap()).unwrap_or(f64::NAN)))
            .collect()
    }
}
