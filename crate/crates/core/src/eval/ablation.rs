use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScoreRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub run_id: String,
    pub values: Vec<f64>,
    /// `value - baseline value`, per metric.
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub baseline: String,
    pub metrics: Vec<String>,
    pub rows: Vec<AblationRow>,
}

fn fmt(v: f64) -> String {
    crate::metrics::format_value((v * 1e4).round() / 1e4)
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| run |");
        for m in &self.metrics {
            let _ = write!(s, " {m} | Δ {m} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|---|".repeat(self.metrics.len()));
        s.push('\n');
        for r in &self.rows {
            let name = if r.run_id == self.baseline { format!("{} (baseline)", r.run_id) } else { r.run_id.clone() };
            let _ = write!(s, "| {name} |");
            for (v, d) in r.values.iter().zip(&r.deltas) {
                let _ = write!(s, " {} | {}{} |", fmt(*v), if *d > 0.0 { "+" } else { "" }, fmt(*d));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["run_id".to_string()];
        for m in &self.metrics {
            header.push(m.clone());
            header.push(format!("delta_{m}"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.run_id.clone()];
            for (v, d) in r.values.iter().zip(&r.deltas) {
                rec.push(crate::metrics::format_value(*v));
                rec.push(crate::metrics::format_value(*d));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Compares the mean scores of `runs` (in the given order) against `baseline`.
pub fn ablation_report(
    runs: &[String],
    baseline: &str,
    metrics: &[String],
    results: &BTreeMap<String, ScoreRow>,
) -> Result<AblationTable> {
    let lookup = |id: &str| results.get(id).ok_or_else(|| Error::MissingRun(id.to_string()));
    let mean = |row: &ScoreRow, m: &str| {
        row.mean(m).ok_or_else(|| Error::MissingMetric(format!("{m} in run `{}`", row.method_id)))
    };
    let base = lookup(baseline)?;
    let base_values = metrics.iter().map(|m| mean(base, m)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(runs.len());
    for id in runs {
        let row = lookup(id)?;
        let values = metrics.iter().map(|m| mean(row, m)).collect::<Result<Vec<_>>>()?;
        let deltas = values.iter().zip(&base_values).map(|(v, b)| v - b).collect();
        rows.push(AblationRow { run_id: id.clone(), values, deltas });
    }
    Ok(AblationTable { baseline: baseline.to_string(), metrics: metrics.to_vec(), rows })
}
