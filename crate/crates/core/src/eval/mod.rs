//! Benchmark tables, upper-bound analysis, convergence curves and ablation reports.

mod ablation;
mod bounds;
mod curves;

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{MetricRegistry, MetricScore};
use crate::parallel::pool;
use crate::rankdata::{aligned_ids, MethodCorpus};

pub use ablation::{ablation_report, AblationRow, AblationTable};
pub use bounds::{compute_upper_bounds, MethodScores, UpperBoundReport};
pub use curves::{convergence_curves, CurveSummary, MetricCurve, CURVE_METRICS};

/// One `(dataset, method)` cell: per-image scores and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset_id: String,
    pub method_id: String,
    pub image_ids: Vec<String>,
    /// Mean over the images whose score succeeded.
    pub means: BTreeMap<String, MetricScore>,
    /// metric → image_id → score.
    pub per_image: BTreeMap<String, BTreeMap<String, MetricScore>>,
    /// metric → number of images whose evaluation failed.
    pub failures: BTreeMap<String, usize>,
}

impl ScoreRow {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.means.get(metric).map(|m| m.value)
    }

    pub fn scores(&self, metric: &str) -> Option<MethodScores> {
        let m = self.per_image.get(metric)?;
        Some(MethodScores::new(&self.method_id, m.iter().map(|(k, v)| (k.clone(), v.value))))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Adds a row, replacing any previous row for the same cell. Rows of one
    /// dataset must cover the same image ids.
    pub fn insert(&mut self, row: ScoreRow) -> Result<()> {
        if let Some(other) = self.rows.iter().find(|r| r.dataset_id == row.dataset_id && r.method_id != row.method_id) {
            if other.image_ids != row.image_ids {
                return Err(Error::Alignment(format!(
                    "dataset `{}`: method `{}` covers {} images, `{}` covers {}",
                    row.dataset_id,
                    row.method_id,
                    row.image_ids.len(),
                    other.method_id,
                    other.image_ids.len()
                )));
            }
        }
        self.rows.retain(|r| !(r.dataset_id == row.dataset_id && r.method_id == row.method_id));
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, dataset_id: &str, method_id: &str) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.dataset_id == dataset_id && r.method_id == method_id)
    }

    /// All metric names in any row, sorted.
    pub fn metrics(&self) -> Vec<String> {
        let mut v: Vec<String> = self.rows.iter().flat_map(|r| r.means.keys().cloned()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// `dataset_id,method_id,<metric>...` with one row per cell.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let metrics = self.metrics();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dataset_id".to_string(), "method_id".to_string()];
        header.extend(metrics.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.dataset_id.clone(), r.method_id.clone()];
            rec.extend(metrics.iter().map(|m| r.mean(m).map(crate::metrics::format_value).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub(crate) fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Scores every image of `sr` with each metric. Full-reference metrics are
/// computed against `hr`; images whose evaluation fails are logged, counted
/// and left out of the mean.
pub fn evaluate_method(
    dataset_id: &str,
    sr: &MethodCorpus,
    hr: Option<&MethodCorpus>,
    metrics: &[String],
    registry: &MetricRegistry,
    workers: usize,
) -> Result<ScoreRow> {
    let mut needs_hr = false;
    for m in metrics {
        needs_hr |= registry.needs_reference(m)?;
    }
    let ids = match hr {
        Some(hr) => aligned_ids(&[sr.clone(), hr.clone()])?,
        None if needs_hr => return Err(Error::Alignment(format!("metrics {metrics:?} need an HR corpus"))),
        None => sr.images.keys().cloned().collect(),
    };
    if ids.is_empty() {
        return Err(Error::EmptyDataset(format!("corpus `{}` has no images", sr.method_id)));
    }
    let score_one = |id: &String| -> Result<Vec<Result<MetricScore>>> {
        let img = Image::load(&sr.images[id])?;
        let reference = match hr {
            Some(hr) if needs_hr => Some(Image::load(&hr.images[id])?),
            _ => None,
        };
        Ok(metrics.iter().map(|m| registry.score(m, &img, reference.as_ref())).collect())
    };
    let results: Vec<Result<Vec<Result<MetricScore>>>> = pool(workers)?.install(|| ids.par_iter().map(score_one).collect());

    let mut per_image: BTreeMap<String, BTreeMap<String, MetricScore>> = BTreeMap::new();
    let mut failures: BTreeMap<String, usize> = metrics.iter().map(|m| (m.clone(), 0)).collect();
    for (id, res) in ids.iter().zip(results) {
        for (m, s) in metrics.iter().zip(res?) {
            match s {
                Ok(s) => {
                    per_image.entry(m.clone()).or_default().insert(id.clone(), s);
                }
                Err(e) => {
                    warn!("{dataset_id}/{}: {m} failed on `{id}`: {e}", sr.method_id);
                    *failures.get_mut(m).unwrap() += 1;
                }
            }
        }
    }
    let mut means = BTreeMap::new();
    for m in metrics {
        if let Some(scores) = per_image.get(m) {
            let mean = scores.values().map(|s| s.value).sum::<f64>() / scores.len() as f64;
            means.insert(m.clone(), MetricScore::new(m.clone(), mean, registry.lower_is_better(m)?));
        }
    }
    Ok(ScoreRow {
        dataset_id: dataset_id.to_string(),
        method_id: sr.method_id.clone(),
        image_ids: ids,
        means,
        per_image,
        failures,
    })
}
