use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{margin_rank_grad, margin_rank_loss, regression_grad, regression_loss, LossMode, RankLossConfig};
use super::model::{RankerArch, RankerModel};
use crate::checkpoint::TrainState;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{srocc_from_scores, Orientation};
use crate::nn::{seeded_rng, Adam, AdamConfig, Layer, Mode, Scalar, Tensor};
use crate::rankdata::{RankDataset, Split};

/// Consecutive non-finite steps tolerated before training aborts.
pub const NON_FINITE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerTrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub total_iters: u64,
    /// Pairs per iteration; each contributes two images to the batch.
    pub batch_pairs: usize,
    pub log_every: u64,
    pub val_every: u64,
    pub beta1: f64,
    pub beta2: f64,
}

impl RankerTrainConfig {
    pub fn paper() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            lr_decay_factor: 0.5,
            lr_decay_every: 100_000,
            total_iters: 300_000,
            batch_pairs: 16,
            log_every: 1000,
            val_every: 10_000,
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    pub fn desk() -> Self {
        Self { lr_decay_every: 1000, total_iters: 2000, log_every: 50, val_every: 250, ..Self::paper() }
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        let steps = if self.lr_decay_every == 0 { 0 } else { iteration / self.lr_decay_every };
        self.learning_rate * self.lr_decay_factor.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.lr_decay_factor];
        if positive.iter().any(|v| !(*v > 0.0)) || self.weight_decay < 0.0 {
            return Err(Error::Config("ranker learning rate and decay factor must be positive".into()));
        }
        if self.batch_pairs == 0 || self.total_iters == 0 || self.log_every == 0 {
            return Err(Error::Config("ranker batch_pairs, total_iters and log_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerConfig {
    pub arch: RankerArch,
    pub loss: RankLossConfig,
    pub train: RankerTrainConfig,
}

impl RankerConfig {
    pub fn paper() -> Self {
        Self { arch: RankerArch::paper(), loss: RankLossConfig::default(), train: RankerTrainConfig::paper() }
    }

    pub fn desk() -> Self {
        Self { arch: RankerArch::desk(), loss: RankLossConfig::default(), train: RankerTrainConfig::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if !(self.loss.epsilon > 0.0) {
            return Err(Error::Config(format!("margin epsilon must be positive, got {}", self.loss.epsilon)));
        }
        Ok(())
    }
}

/// Anything that maps images to scores, lower meaning better.
pub trait ScoreModel {
    fn score_batch(&mut self, imgs: &[&Image]) -> Result<Vec<f64>>;
}

impl<T: Scalar> ScoreModel for RankerModel<T> {
    fn score_batch(&mut self, imgs: &[&Image]) -> Result<Vec<f64>> {
        self.score_images(imgs)
    }
}

/// Adapts a per-image closure to [`ScoreModel`].
pub struct FnScorer<F>(pub F);

impl<F: FnMut(&Image) -> f64> ScoreModel for FnScorer<F> {
    fn score_batch(&mut self, imgs: &[&Image]) -> Result<Vec<f64>> {
        Ok(imgs.iter().map(|i| (self.0)(i)).collect())
    }
}

/// Mean over sites of the rank correlation between level labels (1 = best)
/// and predicted scores (lower = better).
pub fn validate_srocc(model: &mut dyn ScoreModel, sites: &[Vec<(&Image, u32)>]) -> Result<f64> {
    if sites.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut total = 0.0;
    for site in sites {
        if site.len() < 2 {
            return Err(Error::TooFewSamples { got: site.len(), need: 2 });
        }
        let imgs: Vec<&Image> = site.iter().map(|(i, _)| *i).collect();
        let labels: Vec<f64> = site.iter().map(|(_, l)| f64::from(*l)).collect();
        let scores = model.score_batch(&imgs)?;
        total += srocc_from_scores(&labels, Orientation::LowerIsBetter, &scores, Orientation::LowerIsBetter)?;
    }
    Ok(total / sites.len() as f64)
}

pub fn mean_abs_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!("{} scores vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// `E|R(sr1_i) - R(sr2_i)|` over aligned image lists.
pub fn score_distance_stat(model: &mut dyn ScoreModel, sr1: &[&Image], sr2: &[&Image]) -> Result<f64> {
    if sr1.len() != sr2.len() {
        return Err(Error::Alignment(format!("corpora hold {} and {} images", sr1.len(), sr2.len())));
    }
    if let Some(i) = (0..sr1.len()).find(|&i| sr1[i].shape() != sr2[i].shape()) {
        return Err(Error::Alignment(format!("image {i}: shapes {:?} and {:?}", sr1[i].shape(), sr2[i].shape())));
    }
    let a = model.score_batch(sr1)?;
    let b = model.score_batch(sr2)?;
    mean_abs_distance(&a, &b)
}

/// [`score_distance_stat`] between two methods' patches over one split of a rank dataset.
pub fn level_distance(model: &mut dyn ScoreModel, ds: &RankDataset, method_a: &str, method_b: &str, split: Split) -> Result<f64> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for site in ds.sites_in(split) {
        let find = |m: &str| site.patches.iter().copied().find(|&i| ds.manifest.patches[i].method_id == m);
        if let (Some(i), Some(j)) = (find(method_a), find(method_b)) {
            a.push(ds.image(i));
            b.push(ds.image(j));
        }
    }
    score_distance_stat(model, &a, &b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: u64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub val_srocc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mode: LossMode,
    pub rows: Vec<ReportRow>,
    /// `(iteration, loss)` on a batch drawn once before training.
    pub fixed_batch_loss: Vec<(u64, f64)>,
    pub final_val_srocc: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub iterations: u64,
}

impl TrainingReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "loss", "val_srocc"])?;
        for r in &self.rows {
            let v = r.val_srocc.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([r.iteration.to_string(), r.loss.to_string(), v])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Sample {
    first: usize,
    second: usize,
    gamma: f64,
}

struct Trainer<'a> {
    ds: &'a RankDataset,
    cfg: &'a RankerConfig,
    metric: String,
    train_pairs: Vec<Vec<usize>>,
}

impl Trainer<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let site = &self.train_pairs[rng.random_range(0..self.train_pairs.len())];
                let pair = &self.ds.manifest.pairs[site[rng.random_range(0..site.len())]];
                let idx = |id: &str| self.ds.patch_index(id).expect("manifest checked pair ids");
                Sample { first: idx(&pair.first), second: idx(&pair.second), gamma: f64::from(pair.gamma) }
            })
            .collect()
    }

    fn batch(&self, samples: &[Sample]) -> Result<Tensor<f32>> {
        let mut imgs: Vec<&Image> = samples.iter().map(|s| self.ds.image(s.first)).collect();
        imgs.extend(samples.iter().map(|s| self.ds.image(s.second)));
        Tensor::from_images(&imgs)
    }

    fn target(&self, patch: usize) -> Result<f64> {
        self.ds.manifest.patches[patch]
            .score(&self.metric)
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::MissingMetric(format!("{} (finite regression target)", self.metric)))
    }

    /// Mean loss over the batch and its gradient w.r.t. the `2n` scores.
    fn loss(&self, samples: &[Sample], scores: &[f32]) -> Result<(f64, Vec<f32>)> {
        let n = samples.len();
        let mut grads = vec![0.0f32; 2 * n];
        let mut total = 0.0;
        match self.cfg.loss.mode {
            LossMode::MarginRank => {
                let eps = self.cfg.loss.epsilon;
                for (i, s) in samples.iter().enumerate() {
                    let (s1, s2) = (f64::from(scores[i]), f64::from(scores[n + i]));
                    total += margin_rank_loss(s1, s2, s.gamma, eps);
                    let (g1, g2) = margin_rank_grad(s1, s2, s.gamma, eps);
                    grads[i] = (g1 / n as f64) as f32;
                    grads[n + i] = (g2 / n as f64) as f32;
                }
                Ok((total / n as f64, grads))
            }
            LossMode::Regression => {
                let m = 2 * n;
                for (i, s) in samples.iter().enumerate() {
                    for (j, patch) in [(i, s.first), (n + i, s.second)] {
                        let (v, t) = (f64::from(scores[j]), self.target(patch)?);
                        total += regression_loss(v, t);
                        grads[j] = (regression_grad(v, t) / m as f64) as f32;
                    }
                }
                Ok((total / m as f64, grads))
            }
        }
    }

    fn val_sites(&self) -> Vec<Vec<(&Image, u32)>> {
        self.ds
            .sites_in(Split::Val)
            .iter()
            .filter_map(|s| {
                let v: Vec<(&Image, u32)> = s
                    .patches
                    .iter()
                    .filter_map(|&i| self.ds.manifest.patches[i].level_label.map(|l| (self.ds.image(i), l)))
                    .collect();
                (v.len() >= 2).then_some(v)
            })
            .collect()
    }

    fn val_loss(&self, model: &mut RankerModel<f32>) -> Result<Option<f64>> {
        let samples: Vec<Sample> = self
            .ds
            .manifest
            .pairs
            .iter()
            .filter(|p| p.split == Split::Val)
            .map(|p| Sample {
                first: self.ds.patch_index(&p.first).unwrap(),
                second: self.ds.patch_index(&p.second).unwrap(),
                gamma: f64::from(p.gamma),
            })
            .collect();
        if samples.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for chunk in samples.chunks(32) {
            let x = self.batch(chunk)?;
            let scores = model.forward(&x, Mode::Infer);
            total += self.loss(chunk, &scores)?.0 * chunk.len() as f64;
        }
        Ok(Some(total / samples.len() as f64))
    }
}

/// Trains a ranker on the training split and evaluates it on the validation
/// split. With `out_dir`, writes `ranker.ckpt`, `report.csv` and `report.json`.
pub fn train_ranker(
    ds: &RankDataset,
    cfg: &RankerConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(RankerModel<f32>, TrainingReport)> {
    cfg.validate()?;
    let train_pairs: Vec<Vec<usize>> =
        ds.sites_in(Split::Train).iter().filter(|s| !s.pairs.is_empty()).map(|s| s.pairs.clone()).collect();
    if train_pairs.is_empty() {
        return Err(Error::EmptyDataset("rank dataset has no training pairs".into()));
    }
    let trainer = Trainer { ds, cfg, metric: ds.metric().to_string(), train_pairs };
    let mut init_rng = seeded_rng(seed, "ranker.init");
    let mut sample_rng = seeded_rng(seed, "ranker.sample");
    let mut fixed_rng = seeded_rng(seed, "ranker.fixed");
    let mut model = RankerModel::<f32>::new(cfg.arch.clone(), &mut init_rng)?;
    let tc = &cfg.train;
    let mut opt = Adam::new(AdamConfig {
        lr: tc.learning_rate,
        beta1: tc.beta1,
        beta2: tc.beta2,
        eps: 1e-8,
        weight_decay: tc.weight_decay,
    });
    let fixed = trainer.draw(&mut fixed_rng, tc.batch_pairs);
    let fixed_x = trainer.batch(&fixed)?;
    let val_sites = trainer.val_sites();
    let fixed_loss = |model: &mut RankerModel<f32>, it: u64| -> Result<(u64, f64)> {
        let scores = model.forward(&fixed_x, Mode::Infer);
        Ok((it, trainer.loss(&fixed, &scores)?.0))
    };

    let mut report = TrainingReport {
        mode: cfg.loss.mode,
        rows: Vec::new(),
        fixed_batch_loss: vec![fixed_loss(&mut model, 0)?],
        final_val_srocc: None,
        final_val_loss: None,
        iterations: tc.total_iters,
    };
    let (mut window, mut window_n, mut bad_streak) = (0.0, 0u64, 0usize);
    for it in 1..=tc.total_iters {
        opt.set_lr(tc.lr_at(it - 1));
        let samples = trainer.draw(&mut sample_rng, tc.batch_pairs);
        let x = trainer.batch(&samples)?;
        let scores = model.forward(&x, Mode::Train);
        let (loss, grads) = trainer.loss(&samples, &scores)?;
        if !loss.is_finite() {
            bad_streak += 1;
            model.net_mut().clear_cache();
            if bad_streak >= NON_FINITE_LIMIT {
                return Err(Error::NonFiniteLoss(format!(
                    "{bad_streak} consecutive non-finite ranker losses ending at iteration {it} (lr {})",
                    tc.lr_at(it - 1)
                )));
            }
            continue;
        }
        bad_streak = 0;
        model.backward(&grads, true);
        opt.step(model.net_mut());
        window += loss;
        window_n += 1;
        if it % 200 == 0 || it == tc.total_iters {
            report.fixed_batch_loss.push(fixed_loss(&mut model, it)?);
        }
        let validate = (tc.val_every > 0 && it % tc.val_every == 0) || it == tc.total_iters;
        let val_srocc = if validate && !val_sites.is_empty() {
            let v = validate_srocc(&mut model, &val_sites)?;
            info!("ranker it {it}: val srocc {v:.4}");
            Some(v)
        } else {
            None
        };
        if it % tc.log_every == 0 || val_srocc.is_some() {
            let mean = if window_n > 0 { window / window_n as f64 } else { f64::NAN };
            debug!("ranker it {it}: loss {mean:.5}");
            report.rows.push(ReportRow { iteration: it, loss: mean, val_srocc });
            window = 0.0;
            window_n = 0;
        }
        if it == tc.total_iters {
            report.final_val_srocc = val_srocc;
        }
    }
    report.final_val_loss = trainer.val_loss(&mut model)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let state = TrainState { iteration: tc.total_iters, seed, lr: tc.lr_at(tc.total_iters) };
        model.to_checkpoint(state)?.save(dir.join("ranker.ckpt"))?;
        report.write_csv(dir.join("report.csv"))?;
        let path = dir.join("report.json");
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok((model, report))
}
