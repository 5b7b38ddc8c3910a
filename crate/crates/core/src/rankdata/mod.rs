//! Rank datasets: aligned patches cut from several methods' outputs, scored
//! with a perceptual metric and paired with an order label.

mod manifest;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{ranks_from_scores, MetricRegistry, MetricScore, NiqeModel, NiqeScorer, Orientation, Scorer, NIQE};

pub use manifest::{MANIFEST_FILE, MANIFEST_VERSION, ManifestHeader, ManifestLine, RankDataset, RankManifest, Site};

/// One method's outputs, keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodCorpus {
    pub method_id: String,
    pub images: BTreeMap<String, PathBuf>,
}

impl MethodCorpus {
    pub fn new(method_id: impl Into<String>, images: BTreeMap<String, PathBuf>) -> Self {
        Self { method_id: method_id.into(), images }
    }

    /// Every `*.png` in `dir`, keyed by file stem.
    pub fn from_dir(method_id: impl Into<String>, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut images = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    images.insert(stem.to_string(), path.clone());
                }
            }
        }
        Ok(Self::new(method_id, images))
    }

    /// Corpora laid out as `<root>/<method_id>/<image_id>.png`. An empty
    /// `methods` list takes every subdirectory in name order.
    pub fn discover(root: impl AsRef<Path>, methods: &[String]) -> Result<Vec<Self>> {
        let root = root.as_ref();
        let names: Vec<String> = if methods.is_empty() {
            let mut v = Vec::new();
            for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
                let path = entry.map_err(|e| Error::io(root, e))?.path();
                if path.is_dir() {
                    if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                        v.push(name.to_string());
                    }
                }
            }
            v.sort();
            v
        } else {
            methods.to_vec()
        };
        names.iter().map(|m| Self::from_dir(m.clone(), root.join(m))).collect()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Image ids shared by all corpora; errors unless every id set is identical.
pub fn aligned_ids(corpora: &[MethodCorpus]) -> Result<Vec<String>> {
    let Some(first) = corpora.first() else {
        return Ok(Vec::new());
    };
    for c in &corpora[1..] {
        if !c.images.keys().eq(first.images.keys()) {
            let missing: Vec<&String> = first.images.keys().filter(|k| !c.images.contains_key(*k)).collect();
            let extra: Vec<&String> = c.images.keys().filter(|k| !first.images.contains_key(*k)).collect();
            return Err(Error::Alignment(format!(
                "corpus `{}` differs from `{}`: missing {missing:?}, extra {extra:?}",
                c.method_id, first.method_id
            )));
        }
    }
    Ok(first.images.keys().cloned().collect())
}

/// Square crop at `(top, left)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Crop {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

/// All fully contained crops at multiples of `stride`, row-major.
pub fn extract_patch_grid(shape: (usize, usize), patch: usize, stride: usize) -> Result<Vec<Crop>> {
    let (h, w) = shape;
    if patch == 0 || stride == 0 {
        return Err(Error::Config("patch and stride must be positive".into()));
    }
    if patch > h.min(w) {
        return Err(Error::PatchTooLarge { patch, height: h, width: w });
    }
    let (rows, cols) = ((h - patch) / stride + 1, (w - patch) / stride + 1);
    Ok((0..rows)
        .flat_map(|r| (0..cols).map(move |c| Crop { top: r * stride, left: c * stride, size: patch }))
        .collect())
}

/// Level labels `1..=K`, 1 for the best score; ties keep input order.
pub fn label_levels(scores: &[f64], orientation: Orientation) -> Vec<u32> {
    ranks_from_scores(scores, orientation).into_iter().map(|r| r as u32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Order by the per-patch metric score.
    MetricRank,
    /// Order by a fixed method precedence, ignoring scores.
    ModelClassification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    PerPatch,
    WholeImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub image_id: String,
    pub method_id: String,
    pub crop: Crop,
    pub scores: BTreeMap<String, MetricScore>,
    pub level_label: Option<u32>,
    pub split: Split,
    /// Patch file relative to the manifest directory.
    pub path: String,
}

impl PatchRecord {
    pub fn score(&self, metric: &str) -> Option<f64> {
        self.scores.get(metric).map(|s| s.value)
    }
}

/// Two patches of one site. `gamma = +1` means `first` is the better one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPair {
    pub first: String,
    pub second: String,
    pub gamma: i8,
    pub strategy: Strategy,
    pub split: Split,
}

impl RankPair {
    pub fn better(&self) -> &str {
        if self.gamma > 0 {
            &self.first
        } else {
            &self.second
        }
    }

    pub fn worse(&self) -> &str {
        if self.gamma > 0 {
            &self.second
        } else {
            &self.first
        }
    }

    /// Same supervision with the operands swapped.
    pub fn swapped(&self) -> Self {
        Self { first: self.second.clone(), second: self.first.clone(), gamma: -self.gamma, ..self.clone() }
    }
}

/// Every unordered pair of `records` (which must share one site), in input order.
///
/// Under `MetricRank` the label follows `metric`'s orientation and tied pairs
/// are dropped; under `ModelClassification` it follows `precedence` (best first).
pub fn make_pairs(records: &[PatchRecord], strategy: Strategy, metric: &str, precedence: &[String]) -> Result<Vec<RankPair>> {
    if records.len() < 2 {
        return Err(Error::InsufficientLevels(format!("{} record(s) at site, need 2", records.len())));
    }
    let (image, crop) = (&records[0].image_id, records[0].crop);
    if records.iter().any(|r| &r.image_id != image || r.crop != crop) {
        return Err(Error::Alignment("records passed to make_pairs do not share one site".into()));
    }
    let key: Vec<f64> = match strategy {
        Strategy::MetricRank => records
            .iter()
            .map(|r| {
                let s = r.scores.get(metric).ok_or_else(|| Error::MissingMetric(metric.to_string()))?;
                Ok(if s.lower_is_better { s.value } else { -s.value })
            })
            .collect::<Result<_>>()?,
        Strategy::ModelClassification => records
            .iter()
            .map(|r| {
                precedence
                    .iter()
                    .position(|m| m == &r.method_id)
                    .map(|p| p as f64)
                    .ok_or_else(|| Error::Config(format!("method `{}` missing from precedence list", r.method_id)))
            })
            .collect::<Result<_>>()?,
    };
    let mut pairs = Vec::new();
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let gamma = if key[i] < key[j] {
                1
            } else if key[j] < key[i] {
                -1
            } else {
                continue;
            };
            pairs.push(RankPair {
                first: records[i].patch_id.clone(),
                second: records[j].patch_id.clone(),
                gamma,
                strategy,
                split: records[i].split,
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankgenConfig {
    pub metric: String,
    pub strategy: Strategy,
    /// Method order for model classification, best first.
    #[serde(default)]
    pub precedence: Vec<String>,
    /// Corpus subdirectories to use; empty takes all of them.
    #[serde(default)]
    pub methods: Vec<String>,
    /// Ground-truth corpus for full-reference metrics.
    pub reference_method: String,
    pub patch: usize,
    pub stride: usize,
    pub val_fraction: f64,
    pub scoring: Scoring,
    /// NIQE block size override (patch must be at least twice this).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub niqe_block: Option<usize>,
    pub workers: usize,
}

impl RankgenConfig {
    pub fn desk() -> Self {
        Self {
            metric: NIQE.into(),
            strategy: Strategy::MetricRank,
            precedence: Vec::new(),
            methods: Vec::new(),
            reference_method: "hr".into(),
            patch: 96,
            stride: 96,
            val_fraction: 0.1,
            scoring: Scoring::PerPatch,
            niqe_block: Some(48),
            workers: 0,
        }
    }

    pub fn paper() -> Self {
        Self { patch: 296, stride: 200, niqe_block: None, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if self.patch == 0 || self.stride == 0 {
            return Err(Error::Config("patch and stride must be positive".into()));
        }
        if self.strategy == Strategy::ModelClassification && self.precedence.is_empty() {
            return Err(Error::Config("model_classification needs a precedence list".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

fn site_hash(seed: u64, image_id: &str, crop: Crop) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"split");
    h.update((image_id.len() as u64).to_le_bytes());
    h.update(image_id.as_bytes());
    for v in [crop.top, crop.left, crop.size] {
        h.update((v as u64).to_le_bytes());
    }
    h.finalize().into()
}

/// Sites ordered by their seeded hash; the first `round(val_fraction * N)` go to validation.
pub fn split_sites(sites: &[(String, Crop)], val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..sites.len()).collect();
    let keys: Vec<[u8; 32]> = sites.iter().map(|(id, c)| site_hash(seed, id, *c)).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    let n_val = (val_fraction * sites.len() as f64).round() as usize;
    let mut out = vec![Split::Train; sites.len()];
    for &i in order.iter().take(n_val) {
        out[i] = Split::Val;
    }
    out
}

fn patch_id(method: &str, image_id: &str, crop: Crop) -> String {
    format!("{method}/{image_id}/{}_{}", crop.top, crop.left)
}

struct SiteResult {
    image_id: String,
    crop: Crop,
    patches: Vec<(PatchRecord, Image)>,
}

enum MetricFn<'a> {
    Scorer(Arc<dyn Scorer>),
    Registry(&'a MetricRegistry, String),
}

impl MetricFn<'_> {
    fn score(&self, img: &Image, reference: Option<&Image>) -> Result<MetricScore> {
        match self {
            MetricFn::Scorer(s) => s.score(img, reference),
            MetricFn::Registry(r, name) => r.score(name, img, reference),
        }
    }
}

fn is_skippable(e: &Error) -> bool {
    matches!(e, Error::DegenerateStatistics(_))
}

/// Builds the rank dataset under `out_dir`: `patches/<method>/<image>/<top>_<left>.png`
/// plus `manifest.jsonl`. Sites where any method's patch is degenerate under
/// the metric are dropped for all methods.
pub fn build_rank_dataset(
    corpora: &[MethodCorpus],
    registry: &MetricRegistry,
    cfg: &RankgenConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<RankManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    if corpora.len() < 2 {
        return Err(Error::InsufficientLevels(format!("{} corpus/corpora, need at least 2", corpora.len())));
    }
    let ids = aligned_ids(corpora)?;
    if ids.is_empty() {
        return Err(Error::InsufficientLevels("corpora contain no images".into()));
    }
    let lower = registry.lower_is_better(&cfg.metric)?;
    let metric = match (cfg.metric.as_str(), cfg.niqe_block) {
        (NIQE, Some(b)) => MetricFn::Scorer(Arc::new(NiqeScorer::new(NiqeModel::pristine().with_block_size(b)?))),
        _ => MetricFn::Registry(registry, cfg.metric.clone()),
    };
    let reference = if registry.needs_reference(&cfg.metric)? {
        let r = corpora.iter().find(|c| c.method_id == cfg.reference_method).ok_or_else(|| {
            Error::Config(format!("metric `{}` needs the reference corpus `{}`", cfg.metric, cfg.reference_method))
        })?;
        Some(r)
    } else {
        None
    };
    let methods: Vec<String> = corpora.iter().map(|c| c.method_id.clone()).collect();
    let orientation = Orientation::from_lower_is_better(lower);

    let process = |image_id: &String| -> Result<(Vec<SiteResult>, usize)> {
        let images: Vec<Image> = corpora.iter().map(|c| Image::load(&c.images[image_id])).collect::<Result<_>>()?;
        let ref_img = reference.map(|r| Image::load(&r.images[image_id])).transpose()?;
        let shape = images[0].shape();
        if let Some((i, img)) = images.iter().enumerate().find(|(_, im)| im.shape() != shape) {
            return Err(Error::Alignment(format!(
                "`{image_id}`: {} is {:?} but {} is {:?}",
                methods[i],
                img.shape(),
                methods[0],
                shape
            )));
        }
        if let Some(r) = &ref_img {
            if (r.height(), r.width()) != (shape.0, shape.1) {
                return Err(Error::Alignment(format!("`{image_id}`: reference size differs from outputs")));
            }
        }
        let grid = extract_patch_grid((shape.0, shape.1), cfg.patch, cfg.stride)?;
        let whole = match cfg.scoring {
            Scoring::PerPatch => None,
            Scoring::WholeImage => {
                let mut v = Vec::with_capacity(images.len());
                for (m, im) in images.iter().enumerate() {
                    match metric.score(im, ref_img.as_ref()) {
                        Ok(s) => v.push(s),
                        Err(e) if is_skippable(&e) => {
                            warn!("dropping image {image_id}: {}: {e}", methods[m]);
                            return Ok((Vec::new(), grid.len()));
                        }
                        Err(e) => return Err(e),
                    }
                }
                Some(v)
            }
        };
        let mut sites = Vec::new();
        let mut dropped = 0;
        'crops: for crop in grid {
            let mut patches = Vec::with_capacity(images.len());
            let ref_patch = ref_img.as_ref().map(|r| r.crop(crop.top, crop.left, crop.size, crop.size)).transpose()?;
            for (m, img) in images.iter().enumerate() {
                let patch = img.crop(crop.top, crop.left, crop.size, crop.size)?;
                let score = match &whole {
                    Some(w) => w[m].clone(),
                    None => match metric.score(&patch, ref_patch.as_ref()) {
                        Ok(s) => s,
                        Err(e) if is_skippable(&e) => {
                            warn!("dropping site {image_id} @ ({}, {}): {}: {e}", crop.top, crop.left, methods[m]);
                            dropped += 1;
                            continue 'crops;
                        }
                        Err(e) => return Err(e),
                    },
                };
                let rec = PatchRecord {
                    patch_id: patch_id(&methods[m], image_id, crop),
                    image_id: image_id.clone(),
                    method_id: methods[m].clone(),
                    crop,
                    scores: BTreeMap::from([(cfg.metric.clone(), score)]),
                    level_label: None,
                    split: Split::Train,
                    path: format!("patches/{}/{}/{}_{}.png", methods[m], image_id, crop.top, crop.left),
                };
                patches.push((rec, patch));
            }
            sites.push(SiteResult { image_id: image_id.clone(), crop, patches });
        }
        Ok((sites, dropped))
    };

    let pool = crate::parallel::pool(cfg.workers)?;
    let per_image: Vec<(Vec<SiteResult>, usize)> =
        pool.install(|| ids.par_iter().map(process).collect::<Result<_>>())?;
    let dropped_sites: usize = per_image.iter().map(|(_, d)| d).sum();
    let mut sites: Vec<SiteResult> = per_image.into_iter().flat_map(|(s, _)| s).collect();
    let keys: Vec<(String, Crop)> = sites.iter().map(|s| (s.image_id.clone(), s.crop)).collect();
    let splits = split_sites(&keys, cfg.val_fraction, seed);

    let mut patches = Vec::new();
    let mut pairs = Vec::new();
    for (site, split) in sites.iter_mut().zip(&splits) {
        let labels = match cfg.strategy {
            Strategy::MetricRank => {
                let vals: Vec<f64> = site.patches.iter().map(|(r, _)| r.scores[&cfg.metric].value).collect();
                label_levels(&vals, orientation)
            }
            Strategy::ModelClassification => {
                let keys: Vec<f64> = site
                    .patches
                    .iter()
                    .map(|(r, _)| {
                        cfg.precedence
                            .iter()
                            .position(|m| m == &r.method_id)
                            .map(|p| p as f64)
                            .ok_or_else(|| Error::Config(format!("method `{}` missing from precedence list", r.method_id)))
                    })
                    .collect::<Result<_>>()?;
                label_levels(&keys, Orientation::LowerIsBetter)
            }
        };
        for ((rec, _), label) in site.patches.iter_mut().zip(labels) {
            rec.level_label = Some(label);
            rec.split = *split;
        }
        let recs: Vec<PatchRecord> = site.patches.iter().map(|(r, _)| r.clone()).collect();
        pairs.extend(make_pairs(&recs, cfg.strategy, &cfg.metric, &cfg.precedence)?);
        for (rec, img) in &site.patches {
            let path = out_dir.join(&rec.path);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            img.save(&path)?;
        }
        patches.extend(recs);
    }
    // The worker count does not affect the output, so it is not recorded.
    let recorded = RankgenConfig { workers: 0, ..cfg.clone() };
    let header = ManifestHeader {
        version: manifest::MANIFEST_VERSION,
        seed,
        config_hash: recorded.hash(),
        config: recorded,
        metric: cfg.metric.clone(),
        lower_is_better: lower,
        methods,
        site_count: sites.len(),
        val_site_count: splits.iter().filter(|s| **s == Split::Val).count(),
        dropped_sites,
        patch_count: patches.len(),
        pair_count: pairs.len(),
    };
    let manifest = RankManifest { header, patches, pairs };
    manifest.write(out_dir.join(manifest::MANIFEST_FILE))?;
    info!(
        "rank dataset: {} sites ({} val, {} dropped), {} patches, {} pairs",
        manifest.header.site_count,
        manifest.header.val_site_count,
        dropped_sites,
        manifest.patches.len(),
        manifest.pairs.len()
    );
    Ok(manifest)
}
