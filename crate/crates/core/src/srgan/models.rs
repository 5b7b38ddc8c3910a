use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    export_state, import_state, seeded_rng, ChannelAffine, Conv2d, Layer, LeakyRelu, Linear, MaxPool2d, Mode,
    PixelShuffle, ResidualBlock, Scalar, Sequential, Tensor,
};
use crate::ranker::vgg_trunk;

pub const SCALE: usize = 4;
/// Smallest LR side the generator accepts.
pub const MIN_LR_SIDE: usize = 16;

pub const GENERATOR_KIND: &str = "generator";
pub const DISCRIMINATOR_KIND: &str = "discriminator";
pub const FEATURES_KIND: &str = "features";

fn restore(net: &mut dyn Layer<f32>, ck: &Checkpoint, what: &str) -> Result<()> {
    import_state(net, &ck.params).ok_or_else(|| Error::Checkpoint {
        path: Default::default(),
        reason: format!("parameter count {} does not match the {what} architecture", ck.params.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorArch {
    pub in_channels: usize,
    pub features: usize,
    pub blocks: usize,
    pub slope: f64,
    /// Scale applied to the He initialization of every convolution.
    pub init_scale: f64,
}

impl GeneratorArch {
    pub fn paper() -> Self {
        Self { in_channels: 3, features: 64, blocks: 16, slope: 0.1, init_scale: 0.1 }
    }

    pub fn desk() -> Self {
        Self { features: 8, blocks: 4, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.features == 0 {
            return Err(Error::Config("generator channels and features must be positive".into()));
        }
        Ok(())
    }
}

/// Residual SR network without normalization: a conv stem, residual blocks,
/// two conv + pixel-shuffle ×2 stages and two output convs, added to a
/// bilinear ×4 upsampling of the input.
#[derive(Clone)]
pub struct GeneratorModel {
    pub arch: GeneratorArch,
    net: Sequential<f32>,
}

impl GeneratorModel {
    pub fn new(arch: GeneratorArch, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let (c, nf, s) = (arch.in_channels, arch.features, arch.init_scale);
        let conv = |i, o, rng: &mut ChaCha8Rng| Conv2d::new(i, o, 3, 1, 1).with_init(rng, s);
        let mut net = Sequential::new();
        net.push(conv(c, nf, rng)).push(LeakyRelu::new(arch.slope));
        for _ in 0..arch.blocks {
            let mut body = Sequential::new();
            body.push(conv(nf, nf, rng)).push(LeakyRelu::relu()).push(conv(nf, nf, rng));
            net.push(ResidualBlock::new(body));
        }
        for _ in 0..2 {
            net.push(conv(nf, 4 * nf, rng)).push(PixelShuffle::new(2)).push(LeakyRelu::new(arch.slope));
        }
        net.push(conv(nf, nf, rng)).push(LeakyRelu::new(arch.slope)).push(conv(nf, c, rng));
        Ok(Self { arch, net })
    }

    pub fn net(&self) -> &Sequential<f32> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential<f32> {
        &mut self.net
    }

    /// Unclamped ×4 output.
    pub fn forward(&mut self, lr: &Tensor<f32>, mode: Mode) -> Tensor<f32> {
        let mut out = self.net.forward(lr, mode);
        let base = upsample_bilinear(lr, SCALE);
        out.axpy(1.0, &base);
        out
    }

    /// Accumulates parameter gradients for `grad` w.r.t. the output.
    pub fn backward(&mut self, grad: &Tensor<f32>) {
        self.net.backward(grad, true);
    }

    fn check_input(&self, lr: &Image) -> Result<()> {
        if lr.min_side() < MIN_LR_SIDE {
            return Err(Error::InputTooSmall { height: lr.height(), width: lr.width(), min: MIN_LR_SIDE });
        }
        if lr.channels() != self.arch.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {} channels, image has {}",
                self.arch.in_channels,
                lr.channels()
            )));
        }
        Ok(())
    }

    /// Super-resolves one image; the result is clamped to `[0, 1]`.
    pub fn generate(&mut self, lr: &Image) -> Result<Image> {
        self.check_input(lr)?;
        let x = Tensor::from_images(&[lr])?;
        let y = self.forward(&x, Mode::Infer);
        Ok(y.to_images()?.remove(0))
    }

    pub fn to_checkpoint(&self, state: TrainState) -> Result<Checkpoint> {
        Checkpoint::new(GENERATOR_KIND, &self.arch, state, export_state(&self.net))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ck.arch()?, &mut seeded_rng(0, "generator.restore"))?;
        restore(&mut model.net, ck, "generator")?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(&Checkpoint::load_kind(path, GENERATOR_KIND)?).map_err(|e| with_path(e, path))
    }
}

fn with_path(e: Error, path: &std::path::Path) -> Error {
    match e {
        Error::Checkpoint { reason, .. } => Error::Checkpoint { path: path.into(), reason },
        other => other,
    }
}

/// Bilinear upsampling with half-pixel centres and edge clamping.
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h * factor, w * factor);
    let taps = |o: usize, len: usize| {
        let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, T::c(src - i0 as f64))
    };
    let ys: Vec<_> = (0..oh).map(|o| taps(o, h)).collect();
    let xs: Vec<_> = (0..ow).map(|o| taps(o, w)).collect();
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for i in 0..n * c {
        let src = &x.data()[i * h * w..(i + 1) * h * w];
        let dst = &mut out.data_mut()[i * oh * ow..(i + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
                let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
                dst[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorArch {
    pub in_channels: usize,
    /// Output channels of the ten convolutions; odd layers downsample.
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub slope: f64,
}

impl DiscriminatorArch {
    pub fn paper() -> Self {
        Self { in_channels: 3, widths: vec![64, 64, 128, 128, 256, 256, 512, 512, 512, 512], hidden: 100, slope: 0.2 }
    }

    pub fn desk() -> Self {
        Self { widths: vec![4, 4, 8, 8, 16, 16, 16, 16, 32, 32], hidden: 32, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 10 || self.widths.contains(&0) || self.hidden == 0 {
            return Err(Error::Config(format!("discriminator needs 10 positive conv widths, got {:?}", self.widths)));
        }
        Ok(())
    }
}

/// VGG-style classifier emitting one logit per image. The probability is
/// `sigmoid(logit)` clamped to `[DELTA, 1 - DELTA]`, see [`super::d_probability`].
#[derive(Clone)]
pub struct DiscriminatorModel {
    pub arch: DiscriminatorArch,
    net: Sequential<f32>,
}

impl DiscriminatorModel {
    pub fn new(arch: DiscriminatorArch, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut net = vgg_trunk(arch.in_channels, &arch.widths, arch.slope, 1, 5, rng);
        net.push(Linear::new(*arch.widths.last().unwrap(), arch.hidden).with_init(rng, 1.0))
            .push(LeakyRelu::new(arch.slope))
            .push(Linear::new(arch.hidden, 1).with_init(rng, 1.0));
        Ok(Self { arch, net })
    }

    pub fn net(&self) -> &Sequential<f32> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential<f32> {
        &mut self.net
    }

    pub fn logits(&mut self, x: &Tensor<f32>, mode: Mode) -> Vec<f32> {
        self.net.forward(x, mode).into_data()
    }

    pub fn backward(&mut self, grad_logits: &[f32], param_grads: bool) -> Tensor<f32> {
        let g = Tensor::new([grad_logits.len(), 1, 1, 1], grad_logits.to_vec());
        self.net.backward(&g, param_grads)
    }

    pub fn to_checkpoint(&self, state: TrainState) -> Result<Checkpoint> {
        Checkpoint::new(DISCRIMINATOR_KIND, &self.arch, state, export_state(&self.net))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ck.arch()?, &mut seeded_rng(0, "discriminator.restore"))?;
        restore(&mut model.net, ck, "discriminator")?;
        Ok(model)
    }
}

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureArch {
    /// Width of each of the five VGG19 blocks.
    pub widths: [usize; 5],
    /// Convolutions per block.
    pub depths: [usize; 5],
}

impl FeatureArch {
    pub fn vgg19() -> Self {
        Self { widths: [64, 128, 256, 512, 512], depths: [2, 2, 4, 4, 4] }
    }

    /// Same layout at one sixteenth of the width.
    pub fn desk() -> Self {
        Self { widths: [4, 8, 16, 32, 32], ..Self::vgg19() }
    }
}

/// Frozen feature map: ImageNet normalization, then VGG19 convolutions up to
/// the last convolution of block 5, taken before its activation.
#[derive(Clone)]
pub struct FeatureExtractor {
    pub arch: FeatureArch,
    net: Sequential<f32>,
}

/// Seed of the random-weight extractor used when no weights file is given.
pub const FALLBACK_SEED: u64 = 19;

impl FeatureExtractor {
    fn build(arch: FeatureArch, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Sequential::new();
        net.push(ChannelAffine::new(IMAGENET_MEAN.to_vec(), IMAGENET_STD.to_vec()));
        let mut c = 3;
        for (b, (&w, &d)) in arch.widths.iter().zip(&arch.depths).enumerate() {
            if b > 0 {
                net.push(MaxPool2d::new());
            }
            for i in 0..d {
                net.push(Conv2d::new(c, w, 3, 1, 1).with_init(rng, 1.0));
                c = w;
                if b < 4 || i + 1 < d {
                    net.push(LeakyRelu::relu());
                }
            }
        }
        Self { arch, net }
    }

    /// Pinned random-weight extractor.
    pub fn fallback(arch: FeatureArch) -> Self {
        Self::build(arch, &mut seeded_rng(FALLBACK_SEED, "features.fallback"))
    }

    pub fn net(&self) -> &Sequential<f32> {
        &self.net
    }

    /// Input side must be a multiple of 16 for the four poolings to tile exactly.
    pub fn forward(&mut self, x: &Tensor<f32>, mode: Mode) -> Tensor<f32> {
        self.net.forward(x, mode)
    }

    /// Input gradient; parameters never receive gradients.
    pub fn backward(&mut self, grad: &Tensor<f32>) -> Tensor<f32> {
        self.net.backward(grad, false)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let state = TrainState { iteration: 0, seed: FALLBACK_SEED, lr: 0.0 };
        Checkpoint::new(FEATURES_KIND, &self.arch, state, export_state(&self.net))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::build(ck.arch()?, &mut seeded_rng(0, "features.restore"));
        restore(&mut model.net, ck, "feature extractor")?;
        Ok(model)
    }

    /// Loads weights exported to the checkpoint container, e.g. by
    /// `scripts/export_vgg19.py`.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(&Checkpoint::load_kind(path, FEATURES_KIND)?).map_err(|e| with_path(e, path))
    }
}
