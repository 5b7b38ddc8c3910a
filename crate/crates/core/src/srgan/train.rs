use std::io::Write;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::data::PairedDataset;
use super::losses::{
    adversarial_terms, d_probability, mse_grad, neg_log_d_grad, neg_log_not_d_grad, perceptual_loss_grad,
    rank_content_grad, sigmoid, total_generator_loss, LossComponents, LossWeights,
};
use super::models::{
    DiscriminatorArch, DiscriminatorModel, FeatureArch, FeatureExtractor, GeneratorArch, GeneratorModel,
};
use crate::checkpoint::TrainState;
use crate::error::{Error, Result};
use crate::metrics::{psnr, NiqeModel};
use crate::nn::{export_state, seeded_rng, Adam, AdamConfig, Layer, Mode, Tensor};
use crate::ranker::RankerModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrTrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Iterations at which both learning rates are multiplied by `lr_gamma`.
    pub lr_milestones: Vec<u64>,
    pub lr_gamma: f64,
    pub total_iters: u64,
    pub batch_size: usize,
    /// LR crop side; HR crops are four times larger.
    pub lr_patch: usize,
    /// MSE-only generator iterations run before adversarial training.
    pub pretrain_iters: u64,
    pub pretrain_lr: f64,
    pub rank_temperature: f64,
    pub log_every: u64,
    pub val_every: u64,
    /// Crops in the fixed validation batch.
    pub val_batch: usize,
    /// NIQE block size for validation crops; `None` keeps the default.
    pub val_niqe_block: Option<usize>,
    /// Periodic generator checkpoints; 0 disables them.
    pub checkpoint_every: u64,
}

impl SrTrainConfig {
    pub fn paper() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            lr_milestones: vec![50_000, 100_000, 200_000, 300_000],
            lr_gamma: 0.5,
            total_iters: 600_000,
            batch_size: 8,
            lr_patch: 74,
            pretrain_iters: 0,
            pretrain_lr: 2e-4,
            rank_temperature: 1.0,
            log_every: 100,
            val_every: 5000,
            val_batch: 8,
            val_niqe_block: None,
            checkpoint_every: 50_000,
        }
    }

    pub fn desk() -> Self {
        Self {
            lr_milestones: Vec::new(),
            total_iters: 3000,
            batch_size: 4,
            lr_patch: 24,
            log_every: 50,
            val_every: 500,
            val_batch: 4,
            val_niqe_block: Some(48),
            checkpoint_every: 0,
            ..Self::paper()
        }
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| iteration >= m).count();
        self.learning_rate * self.lr_gamma.powi(k as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.lr_gamma > 0.0 && self.rank_temperature > 0.0) {
            return Err(Error::Config("srgan learning rate, lr_gamma and rank_temperature must be positive".into()));
        }
        if self.batch_size == 0 || self.lr_patch < super::models::MIN_LR_SIDE || self.log_every == 0 || self.val_batch == 0 {
            return Err(Error::Config(format!(
                "srgan batch_size, log_every and val_batch must be positive and lr_patch >= {}",
                super::models::MIN_LR_SIDE
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrganConfig {
    pub generator: GeneratorArch,
    pub discriminator: DiscriminatorArch,
    pub features: FeatureArch,
    pub weights: LossWeights,
    pub train: SrTrainConfig,
}

impl SrganConfig {
    pub fn paper() -> Self {
        Self {
            generator: GeneratorArch::paper(),
            discriminator: DiscriminatorArch::paper(),
            features: FeatureArch::vgg19(),
            weights: LossWeights::default(),
            train: SrTrainConfig::paper(),
        }
    }

    pub fn desk() -> Self {
        Self {
            generator: GeneratorArch::desk(),
            discriminator: DiscriminatorArch::desk(),
            features: FeatureArch::desk(),
            weights: LossWeights::default(),
            train: SrTrainConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights.validate()?;
        self.train.validate()
    }
}

/// Generator and discriminator under training plus the frozen extractor and ranker.
#[derive(Clone)]
pub struct ModelBundle {
    pub g: GeneratorModel,
    pub d: DiscriminatorModel,
    pub f: FeatureExtractor,
    pub r: Option<RankerModel<f32>>,
}

impl ModelBundle {
    /// Fresh G and D from `seed`; F and R are supplied.
    pub fn new(cfg: &SrganConfig, seed: u64, f: FeatureExtractor, r: Option<RankerModel<f32>>) -> Result<Self> {
        let g = GeneratorModel::new(cfg.generator.clone(), &mut seeded_rng(seed, "srgan.g.init"))?;
        let d = DiscriminatorModel::new(cfg.discriminator.clone(), &mut seeded_rng(seed, "srgan.d.init"))?;
        Ok(Self { g, d, f, r })
    }
}

/// Output of [`generator_grad`].
pub struct GeneratorGrad {
    pub components: LossComponents,
    pub total: f64,
    /// Per-item rank-content values; empty when no ranker term is active.
    pub l_r_items: Vec<f64>,
    /// Gradient of the total loss w.r.t. the generator output.
    pub grad: Tensor<f32>,
}

/// Generator objective on one batch given its output `sr`. The discriminator
/// runs in training mode without parameter gradients; F and R are frozen.
pub fn generator_grad(
    bundle: &mut ModelBundle,
    sr: &Tensor<f32>,
    hr: &Tensor<f32>,
    weights: &LossWeights,
    temperature: f64,
) -> Result<GeneratorGrad> {
    let hr_feat = bundle.f.forward(hr, Mode::Infer);
    let (l_p, mut grad) = perceptual_loss_grad(&mut bundle.f, sr, &hr_feat);

    let z = bundle.d.logits(sr, Mode::Train);
    let n = z.len() as f64;
    let l_g = z.iter().map(|&z| -d_probability(f64::from(z)).ln()).sum::<f64>() / n;
    if weights.w_adv > 0.0 {
        let gz: Vec<f32> = z.iter().map(|&z| (weights.w_adv * neg_log_d_grad(f64::from(z)) / n) as f32).collect();
        grad.axpy(1.0, &bundle.d.backward(&gz, false));
    } else {
        bundle.d.net_mut().clear_cache();
    }

    let mut l_r = 0.0;
    let mut l_r_items = Vec::new();
    if weights.w_rank > 0.0 {
        let r = bundle.r.as_mut().ok_or_else(|| Error::MissingRanker)?;
        let (v, items, dx) = rank_content_grad(r, sr, temperature);
        grad.axpy(weights.w_rank as f32, &dx);
        l_r = v;
        l_r_items = items;
    }

    let mut l_m = 0.0;
    if weights.w_mse > 0.0 {
        let (v, dx) = mse_grad(sr, hr);
        grad.axpy(weights.w_mse as f32, &dx);
        l_m = v;
    }
    let components = LossComponents { l_p, l_g, l_r, l_m };
    let total = total_generator_loss(&components, weights)?;
    Ok(GeneratorGrad { components, total, l_r_items, grad })
}

/// One discriminator update on real `hr` then detached `sr`; returns `d_loss`.
fn discriminator_step(d: &mut DiscriminatorModel, opt: &mut Adam, sr: &Tensor<f32>, hr: &Tensor<f32>) -> f64 {
    let z_hr = d.logits(hr, Mode::Train);
    let n = z_hr.len() as f64;
    let g: Vec<f32> = z_hr.iter().map(|&z| (neg_log_d_grad(f64::from(z)) / n) as f32).collect();
    d.backward(&g, true);
    let z_sr = d.logits(sr, Mode::Train);
    let g: Vec<f32> = z_sr.iter().map(|&z| (neg_log_not_d_grad(f64::from(z)) / n) as f32).collect();
    d.backward(&g, true);
    opt.step(d.net_mut());
    z_hr.iter()
        .zip(&z_sr)
        .map(|(&a, &b)| adversarial_terms(d_probability(f64::from(a)), d_probability(f64::from(b))).0)
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrLogRow {
    pub iteration: u64,
    pub l_p: f64,
    pub l_g: f64,
    /// Absent when no rank-content term is trained.
    pub l_r: Option<f64>,
    pub l_total: f64,
    pub val_psnr: Option<f64>,
    pub val_niqe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub iteration: u64,
    /// Mean rank-content loss on the fixed validation batch.
    pub l_r: Option<f64>,
    pub psnr: f64,
    pub niqe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenCheck {
    pub features_before: String,
    pub features_after: String,
    pub ranker_before: Option<String>,
    pub ranker_after: Option<String>,
}

impl FrozenCheck {
    pub fn unchanged(&self) -> bool {
        self.features_before == self.features_after && self.ranker_before == self.ranker_after
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrTrainReport {
    pub rows: Vec<SrLogRow>,
    pub validation: Vec<ValPoint>,
    /// Smallest and largest per-item rank-content value seen in training.
    pub l_r_range: Option<(f64, f64)>,
    pub frozen: FrozenCheck,
    pub pretrain_iters: u64,
    pub iterations: u64,
}

impl SrTrainReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "l_p", "l_g", "l_r", "l_total", "val_psnr", "val_niqe"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.l_p.to_string(),
                r.l_g.to_string(),
                opt(r.l_r),
                r.l_total.to_string(),
                opt(r.val_psnr),
                opt(r.val_niqe),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn digest(layer: &dyn Layer<f32>) -> String {
    let bytes: Vec<u8> = export_state(layer).iter().flat_map(|v| v.to_le_bytes()).collect();
    hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes))
}

struct Validator {
    lr: Tensor<f32>,
    hr: Vec<crate::image::Image>,
    niqe: Option<NiqeModel>,
}

impl Validator {
    fn run(&self, bundle: &mut ModelBundle, iteration: u64, temperature: f64, with_rank: bool) -> Result<ValPoint> {
        let sr = bundle.g.forward(&self.lr, Mode::Infer).to_images()?;
        let mut psnr_sum = 0.0;
        for (s, h) in sr.iter().zip(&self.hr) {
            psnr_sum += psnr(s, h)?.value;
        }
        let niqe = self.niqe.as_ref().and_then(|m| {
            let v: Option<Vec<f64>> = sr.iter().map(|s| m.score(s).ok().map(|v| v.value)).collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        });
        let l_r = match (&mut bundle.r, with_rank) {
            (Some(r), true) => {
                let scores = r.score_images(&sr.iter().collect::<Vec<_>>())?;
                Some(scores.iter().map(|&s| sigmoid(s / temperature)).sum::<f64>() / scores.len() as f64)
            }
            _ => None,
        };
        Ok(ValPoint { iteration, l_r, psnr: psnr_sum / sr.len() as f64, niqe })
    }
}

fn adam(lr: f64, tc: &SrTrainConfig) -> Adam {
    Adam::new(AdamConfig { lr, beta1: tc.beta1, beta2: tc.beta2, eps: 1e-8, weight_decay: 0.0 })
}

/// Adversarial training of `bundle.g` and `bundle.d` with the objective
/// weighted by `cfg.weights`. Validation uses a fixed batch drawn from `val`
/// (or `train` when absent). With `out_dir`, writes `train_log.csv`,
/// `report.json` and the generator/discriminator checkpoints.
pub fn train_srgan(
    bundle: &mut ModelBundle,
    train: &PairedDataset,
    val: Option<&PairedDataset>,
    cfg: &SrganConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<SrTrainReport> {
    cfg.validate()?;
    let tc = &cfg.train;
    let with_rank = cfg.weights.w_rank > 0.0;
    if with_rank && bundle.r.is_none() {
        return Err(Error::MissingRanker);
    }
    train.check_patch(tc.lr_patch)?;
    let val_ds = val.unwrap_or(train);
    val_ds.check_patch(tc.lr_patch)?;

    let features_before = digest(bundle.f.net());
    let ranker_before = bundle.r.as_ref().map(|r| digest(r.net()));

    let mut sample_rng = seeded_rng(seed, "srgan.sample");
    let (val_lr, val_hr) = val_ds.sample(&mut seeded_rng(seed, "srgan.val"), tc.val_batch, tc.lr_patch)?;
    let niqe = match tc.val_niqe_block {
        Some(b) => Some(NiqeModel::pristine().with_block_size(b)?),
        None => Some(NiqeModel::pristine().clone()),
    };
    let validator = Validator { lr: val_lr, hr: val_hr.to_images()?, niqe };

    if tc.pretrain_iters > 0 {
        let mut opt = adam(tc.pretrain_lr, tc);
        for it in 1..=tc.pretrain_iters {
            let (lr, hr) = train.sample(&mut sample_rng, tc.batch_size, tc.lr_patch)?;
            let sr = bundle.g.forward(&lr, Mode::Train);
            let (loss, grad) = mse_grad(&sr, &hr);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("pretrain MSE {loss} at iteration {it}")));
            }
            bundle.g.backward(&grad);
            opt.step(bundle.g.net_mut());
            if it % tc.log_every == 0 {
                debug!("pretrain it {it}: mse {loss:.6}");
            }
        }
    }

    let mut opt_g = adam(tc.learning_rate, tc);
    let mut opt_d = adam(tc.learning_rate, tc);
    let mut report = SrTrainReport {
        rows: Vec::new(),
        validation: vec![validator.run(bundle, 0, tc.rank_temperature, with_rank)?],
        l_r_range: None,
        frozen: FrozenCheck { features_before, features_after: String::new(), ranker_before, ranker_after: None },
        pretrain_iters: tc.pretrain_iters,
        iterations: tc.total_iters,
    };
    let mut acc = [0.0f64; 4];
    let mut acc_n = 0u64;
    for it in 1..=tc.total_iters {
        let lr_now = tc.lr_at(it - 1);
        opt_g.set_lr(lr_now);
        opt_d.set_lr(lr_now);
        let (lr, hr) = train.sample(&mut sample_rng, tc.batch_size, tc.lr_patch)?;
        let sr = bundle.g.forward(&lr, Mode::Train);

        let d_loss = discriminator_step(&mut bundle.d, &mut opt_d, &sr, &hr);
        if !d_loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("discriminator loss {d_loss} at iteration {it}")));
        }
        let step = generator_grad(bundle, &sr, &hr, &cfg.weights, tc.rank_temperature)
            .map_err(|e| match e {
                Error::NonFiniteLoss(m) => Error::NonFiniteLoss(format!("{m} at iteration {it}")),
                other => other,
            })?;
        bundle.g.backward(&step.grad);
        opt_g.step(bundle.g.net_mut());

        for &v in &step.l_r_items {
            let (lo, hi) = report.l_r_range.unwrap_or((v, v));
            report.l_r_range = Some((lo.min(v), hi.max(v)));
        }
        let c = step.components;
        for (a, v) in acc.iter_mut().zip([c.l_p, c.l_g, c.l_r, step.total]) {
            *a += v;
        }
        acc_n += 1;

        let validate = (tc.val_every > 0 && it % tc.val_every == 0) || it == tc.total_iters;
        let point = if validate {
            let p = validator.run(bundle, it, tc.rank_temperature, with_rank)?;
            info!("srgan it {it}: val psnr {:.3} niqe {:?} l_r {:?}", p.psnr, p.niqe, p.l_r);
            report.validation.push(p.clone());
            Some(p)
        } else {
            None
        };
        if it % tc.log_every == 0 || point.is_some() {
            let m = |i: usize| acc[i] / acc_n as f64;
            report.rows.push(SrLogRow {
                iteration: it,
                l_p: m(0),
                l_g: m(1),
                l_r: with_rank.then(|| m(2)),
                l_total: m(3),
                val_psnr: point.as_ref().map(|p| p.psnr),
                val_niqe: point.as_ref().and_then(|p| p.niqe),
            });
            acc = [0.0; 4];
            acc_n = 0;
        }
        if let Some(dir) = out_dir {
            if tc.checkpoint_every > 0 && it % tc.checkpoint_every == 0 {
                let state = TrainState { iteration: it, seed, lr: lr_now };
                bundle.g.to_checkpoint(state)?.save(dir.join("checkpoints").join(format!("generator_{it:07}.ckpt")))?;
            }
        }
    }
    report.frozen.features_after = digest(bundle.f.net());
    report.frozen.ranker_after = bundle.r.as_ref().map(|r| digest(r.net()));
    if !report.frozen.unchanged() {
        return Err(Error::Checkpoint { path: Default::default(), reason: "frozen F or R parameters changed".into() });
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let state = TrainState { iteration: tc.total_iters, seed, lr: tc.lr_at(tc.total_iters) };
        bundle.g.to_checkpoint(state.clone())?.save(dir.join("generator.ckpt"))?;
        bundle.d.to_checkpoint(state)?.save(dir.join("discriminator.ckpt"))?;
        report.write_csv(dir.join("train_log.csv"))?;
        let path = dir.join("report.json");
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
