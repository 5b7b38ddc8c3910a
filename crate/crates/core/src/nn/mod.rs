//! Minimal convolutional network toolkit with explicit per-layer backward passes.
//!
//! Layers cache what their backward pass needs during `forward` (unless run in
//! [`Mode::Infer`]), accumulate parameter gradients in `backward`, and return
//! the gradient with respect to their input. Everything is single-threaded and
//! bit-for-bit deterministic for a fixed seed.

mod init;
mod layers;
mod optim;
mod tensor;

pub use init::{he_normal, seeded_rng};
pub use layers::{
    BatchNorm2d, ChannelAffine, Conv2d, GlobalAvgPool, Layer, LeakyRelu, Linear, MaxPool2d, PixelShuffle,
    ResidualBlock, Sequential,
};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Scalar, Tensor};

/// How a forward pass treats caches and normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, caches kept for backward.
    Train,
    /// Running statistics, caches kept so input gradients can be taken.
    Eval,
    /// Running statistics, nothing cached.
    Infer,
}

impl Mode {
    pub fn caches(self) -> bool {
        !matches!(self, Mode::Infer)
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Flattens parameters then buffers into a single `f32` vector.
pub fn export_state<T: Scalar>(layer: &dyn Layer<T>) -> Vec<f32> {
    let mut out = Vec::new();
    for p in layer.params() {
        out.extend(p.value.iter().map(|v| v.as_f32()));
    }
    for b in layer.buffers() {
        out.extend(b.iter().map(|v| v.as_f32()));
    }
    out
}

/// Inverse of [`export_state`]. Returns `None` when `state` has the wrong length.
pub fn import_state<T: Scalar>(layer: &mut dyn Layer<T>, state: &[f32]) -> Option<()> {
    if state.len() != state_len(layer) {
        return None;
    }
    let mut it = state.iter();
    for p in layer.params_mut() {
        for v in p.value.iter_mut() {
            *v = T::of_f32(*it.next()?);
        }
        p.zero_grad();
    }
    for b in layer.buffers_mut() {
        for v in b.iter_mut() {
            *v = T::of_f32(*it.next()?);
        }
    }
    Some(())
}

pub fn state_len<T: Scalar>(layer: &dyn Layer<T>) -> usize {
    layer.params().iter().map(|p| p.len()).sum::<usize>() + layer.buffers().iter().map(|b| b.len()).sum::<usize>()
}

pub fn zero_grads<T: Scalar>(layer: &mut dyn Layer<T>) {
    for p in layer.params_mut() {
        p.zero_grad();
    }
}

pub fn param_count<T: Scalar>(layer: &dyn Layer<T>) -> usize {
    layer.params().iter().map(|p| p.len()).sum()
}
