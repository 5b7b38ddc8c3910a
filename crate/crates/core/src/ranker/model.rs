use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    export_state, import_state, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, LeakyRelu, Linear, Mode, Scalar, Sequential,
    Tensor,
};

/// Smallest input side accepted by the four stride-2 stages.
pub const MIN_SIDE: usize = 16;
pub const CHECKPOINT_KIND: &str = "ranker";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerArch {
    pub in_channels: usize,
    /// Output channels of the ten convolutions. Layers 2, 4, 6 and 8 use
    /// kernel 4 with stride 2, the others kernel 3 with stride 1.
    pub widths: Vec<usize>,
    pub slope: f64,
}

impl RankerArch {
    pub fn paper() -> Self {
        Self { in_channels: 3, widths: vec![32, 32, 64, 64, 128, 128, 256, 256, 512, 512], slope: 0.2 }
    }

    pub fn desk() -> Self {
        Self { in_channels: 3, widths: vec![8, 8, 16, 16, 16, 16, 32, 32, 32, 32], slope: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 10 || self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config(format!("ranker needs 10 positive conv widths, got {:?}", self.widths)));
        }
        Ok(())
    }
}

/// VGG-style trunk: conv, optional BN and LeakyReLU per layer, then global
/// average pooling. Odd layers below `2 * downsamples` use kernel 4, stride 2.
pub(crate) fn vgg_trunk<T: Scalar>(
    in_channels: usize,
    widths: &[usize],
    slope: f64,
    bn_from: usize,
    downsamples: usize,
    rng: &mut ChaCha8Rng,
) -> Sequential<T> {
    let mut net = Sequential::new();
    let mut c = in_channels;
    for (i, &w) in widths.iter().enumerate() {
        let conv = if i % 2 == 1 && i < 2 * downsamples { Conv2d::new(c, w, 4, 2, 1) } else { Conv2d::new(c, w, 3, 1, 1) };
        net.push(conv.with_init(rng, 1.0));
        if i >= bn_from {
            net.push(BatchNorm2d::new(w));
        }
        net.push(LeakyRelu::new(slope));
        c = w;
    }
    net.push(GlobalAvgPool::new());
    net
}

/// Siamese scoring network; both branches share this one parameter set.
/// Lower scores mean better predicted quality.
#[derive(Clone)]
pub struct RankerModel<T: Scalar = f32> {
    pub arch: RankerArch,
    net: Sequential<T>,
}

impl<T: Scalar> RankerModel<T> {
    pub fn new(arch: RankerArch, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut net = vgg_trunk(arch.in_channels, &arch.widths, arch.slope, 0, 4, rng);
        net.push(Linear::new(*arch.widths.last().unwrap(), 1).with_init(rng, 1.0));
        Ok(Self { arch, net })
    }

    pub fn net(&self) -> &Sequential<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }

    /// One score per batch item.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Vec<T> {
        self.net.forward(x, mode).into_data()
    }

    /// Back-propagates per-item score gradients; returns the input gradient.
    pub fn backward(&mut self, grad_scores: &[T], param_grads: bool) -> Tensor<T> {
        let g = Tensor::new([grad_scores.len(), 1, 1, 1], grad_scores.to_vec());
        self.net.backward(&g, param_grads)
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        if img.min_side() < MIN_SIDE {
            return Err(Error::InputTooSmall { height: img.height(), width: img.width(), min: MIN_SIDE });
        }
        if img.channels() != self.arch.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "ranker expects {} channels, image has {}",
                self.arch.in_channels,
                img.channels()
            )));
        }
        Ok(())
    }

    /// Inference-mode scores, batching runs of equally sized images.
    pub fn score_images(&mut self, imgs: &[&Image]) -> Result<Vec<f64>> {
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(imgs.len());
        let mut start = 0;
        while start < imgs.len() {
            self.check_input(imgs[start])?;
            let shape = imgs[start].shape();
            let mut end = start + 1;
            while end < imgs.len() && end - start < CHUNK && imgs[end].shape() == shape {
                end += 1;
            }
            let x = Tensor::from_images(&imgs[start..end])?;
            out.extend(self.forward(&x, Mode::Infer).into_iter().map(|v| v.to_f64().unwrap()));
            start = end;
        }
        Ok(out)
    }

    pub fn rank_score(&mut self, img: &Image) -> Result<f64> {
        Ok(self.score_images(&[img])?[0])
    }

    pub fn to_checkpoint(&self, state: TrainState) -> Result<Checkpoint> {
        Checkpoint::new(CHECKPOINT_KIND, &self.arch, state, export_state(&self.net))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let arch: RankerArch = ck.arch()?;
        let mut rng = crate::nn::seeded_rng(0, "ranker.restore");
        let mut model = Self::new(arch, &mut rng)?;
        import_state(&mut model.net, &ck.params).ok_or_else(|| Error::Checkpoint {
            path: Default::default(),
            reason: format!("parameter count {} does not match the ranker architecture", ck.params.len()),
        })?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck = Checkpoint::load_kind(path, CHECKPOINT_KIND)?;
        Self::from_checkpoint(&ck).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint { path: path.into(), reason },
            other => other,
        })
    }
}
