use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;

use super::{perceptual_index, psnr, MetricScore, NiqeModel, MA, NIQE, PI, PSNR};
use crate::error::{Error, Result};
use crate::image::Image;

/// Maps an image (and, for full-reference metrics, its ground truth) to a score.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn lower_is_better(&self) -> bool;
    fn needs_reference(&self) -> bool {
        false
    }
    fn score(&self, img: &Image, reference: Option<&Image>) -> Result<MetricScore>;
}

pub struct NiqeScorer {
    model: NiqeModel,
}

impl NiqeScorer {
    pub fn new(model: NiqeModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &NiqeModel {
        &self.model
    }
}

impl Default for NiqeScorer {
    fn default() -> Self {
        Self::new(NiqeModel::pristine().clone())
    }
}

impl Scorer for NiqeScorer {
    fn name(&self) -> &str {
        NIQE
    }

    fn lower_is_better(&self) -> bool {
        true
    }

    fn score(&self, img: &Image, _reference: Option<&Image>) -> Result<MetricScore> {
        self.model.score(img)
    }
}

pub struct PsnrScorer;

impl Scorer for PsnrScorer {
    fn name(&self) -> &str {
        PSNR
    }

    fn lower_is_better(&self) -> bool {
        false
    }

    fn needs_reference(&self) -> bool {
        true
    }

    fn score(&self, img: &Image, reference: Option<&Image>) -> Result<MetricScore> {
        let reference = reference.ok_or_else(|| Error::MissingMetric("psnr needs a reference image".into()))?;
        psnr(img, reference)
    }
}

/// Runs `program [args..] <image.png>` and reads the first number it prints.
pub struct ExternalScorer {
    name: String,
    program: PathBuf,
    args: Vec<String>,
    lower_is_better: bool,
}

impl ExternalScorer {
    pub fn new(name: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>, lower_is_better: bool) -> Self {
        Self { name: name.into(), program: program.into(), args, lower_is_better }
    }
}

impl Scorer for ExternalScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn lower_is_better(&self) -> bool {
        self.lower_is_better
    }

    fn score(&self, img: &Image, _reference: Option<&Image>) -> Result<MetricScore> {
        let file = tempfile::Builder::new()
            .prefix("ranksurge-score-")
            .suffix(".png")
            .tempfile()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        img.save(file.path())?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(file.path())
            .output()
            .map_err(|e| Error::ExternalScorer(format!("{}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(Error::ExternalScorer(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let value = stdout
            .split_whitespace()
            .find_map(|t| t.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::ExternalScorer(format!("no number in output `{}`", stdout.trim())))?;
        Ok(MetricScore::new(self.name.clone(), value, self.lower_is_better))
    }
}

/// Named scorers. `pi` resolves to a registered scorer of that name or, failing
/// that, is composed from the `niqe` and `ma` entries.
#[derive(Clone)]
pub struct MetricRegistry {
    scorers: BTreeMap<String, Arc<dyn Scorer>>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self { scorers: BTreeMap::new() }
    }

    /// NIQE (shipped model) and PSNR.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(NiqeScorer::default()));
        r.register(Arc::new(PsnrScorer));
        r
    }

    pub fn register(&mut self, scorer: Arc<dyn Scorer>) {
        self.scorers.insert(scorer.name().to_string(), scorer);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.scorers.contains_key(name) || (name == PI && self.can_compose_pi())
    }

    fn can_compose_pi(&self) -> bool {
        self.scorers.contains_key(NIQE) && self.scorers.contains_key(MA)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.scorers.keys().cloned().collect();
        if !self.scorers.contains_key(PI) && self.can_compose_pi() {
            v.push(PI.to_string());
        }
        v
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Scorer>> {
        self.scorers.get(name)
    }

    pub fn lower_is_better(&self, name: &str) -> Result<bool> {
        match self.scorers.get(name) {
            Some(s) => Ok(s.lower_is_better()),
            None if name == PI => Ok(true),
            None => Err(Error::MissingMetric(name.to_string())),
        }
    }

    pub fn needs_reference(&self, name: &str) -> Result<bool> {
        match self.scorers.get(name) {
            Some(s) => Ok(s.needs_reference()),
            None if name == PI => Ok(false),
            None => Err(Error::MissingMetric(name.to_string())),
        }
    }

    pub fn score(&self, name: &str, img: &Image, reference: Option<&Image>) -> Result<MetricScore> {
        if let Some(s) = self.scorers.get(name) {
            return s.score(img, reference);
        }
        if name == PI {
            let ma = self.scorers.get(MA).ok_or_else(|| Error::MissingMetric(MA.into()))?;
            let nq = self.scorers.get(NIQE).ok_or_else(|| Error::MissingMetric(NIQE.into()))?;
            return perceptual_index(&nq.score(img, None)?, &ma.score(img, None)?);
        }
        Err(Error::MissingMetric(name.to_string()))
    }
}
