use serde::{Deserialize, Serialize};

use super::models::{DiscriminatorModel, FeatureExtractor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Mode, Tensor};
use crate::ranker::RankerModel;

/// Clamp applied to discriminator probabilities before taking logs.
pub const DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_adv: f64,
    pub w_rank: f64,
    /// Pixel MSE weight α.
    pub w_mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_adv: 0.005, w_rank: 0.03, w_mse: 0.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_adv, self.w_rank, self.w_mse];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {self:?}")));
        }
        Ok(())
    }
}

/// Generator loss terms: perceptual, adversarial, rank-content and pixel MSE.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_p: f64,
    pub l_g: f64,
    pub l_r: f64,
    pub l_m: f64,
}

/// `L_P + w_adv·L_G + w_rank·L_R + α·L_M`.
pub fn total_generator_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    let parts = [c.l_p, c.l_g, c.l_r, c.l_m];
    if let Some(v) = parts.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(format!("generator loss component {v} in {c:?}")));
    }
    Ok(c.l_p + w.w_adv * c.l_g + w.w_rank * c.l_r + w.w_mse * c.l_m)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Discriminator probability for a logit, clamped to `[DELTA, 1 - DELTA]`.
pub fn d_probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(DELTA, 1.0 - DELTA)
}

/// `(d_loss, g_loss)` from the probabilities assigned to a real and a generated image.
pub fn adversarial_terms(p_hr: f64, p_sr: f64) -> (f64, f64) {
    let (p_hr, p_sr) = (p_hr.clamp(DELTA, 1.0 - DELTA), p_sr.clamp(DELTA, 1.0 - DELTA));
    (-(p_hr.ln() + (1.0 - p_sr).ln()), -p_sr.ln())
}

/// Derivative of `-ln d_probability(z)` w.r.t. `z`; zero where the clamp is active.
pub fn neg_log_d_grad(logit: f64) -> f64 {
    let s = sigmoid(logit);
    if s > DELTA && s < 1.0 - DELTA { s - 1.0 } else { 0.0 }
}

/// Derivative of `-ln(1 - d_probability(z))` w.r.t. `z`; zero where the clamp is active.
pub fn neg_log_not_d_grad(logit: f64) -> f64 {
    let s = sigmoid(logit);
    if s > DELTA && s < 1.0 - DELTA { s } else { 0.0 }
}

fn same_shape(sr: &Image, hr: &Image) -> Result<()> {
    if sr.shape() != hr.shape() {
        return Err(Error::ShapeMismatch(format!("sr {:?} vs hr {:?}", sr.shape(), hr.shape())));
    }
    Ok(())
}

/// Mean squared feature difference and its gradient w.r.t. `sr`.
pub fn perceptual_loss_grad(f: &mut FeatureExtractor, sr: &Tensor<f32>, hr_features: &Tensor<f32>) -> (f64, Tensor<f32>) {
    let feat = f.forward(sr, Mode::Eval);
    assert_eq!(feat.shape(), hr_features.shape(), "feature shapes");
    let m = feat.len() as f64;
    let diff = feat.sub(hr_features);
    let loss = diff.data().iter().map(|&d| f64::from(d) * f64::from(d)).sum::<f64>() / m;
    let g = diff.scale((2.0 / m) as f32);
    (loss, f.backward(&g))
}

/// Mean over feature elements of `(φ(sr) - φ(hr))²`.
pub fn perceptual_loss(f: &mut FeatureExtractor, sr: &Image, hr: &Image) -> Result<f64> {
    same_shape(sr, hr)?;
    let a = f.forward(&Tensor::from_images(&[sr])?, Mode::Infer);
    let b = f.forward(&Tensor::from_images(&[hr])?, Mode::Infer);
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Image-level adversarial losses with the discriminator in inference mode.
pub fn adversarial_losses(d: &mut DiscriminatorModel, sr: &Image, hr: &Image) -> Result<(f64, f64)> {
    let z = d.logits(&Tensor::from_images(&[hr, sr])?, Mode::Infer);
    Ok(adversarial_terms(d_probability(f64::from(z[0])), d_probability(f64::from(z[1]))))
}

/// `sigmoid(R(sr) / temperature)` with the ranker frozen.
pub fn rank_content_loss(r: &mut RankerModel<f32>, sr: &Image, temperature: f64) -> Result<f64> {
    Ok(sigmoid(r.rank_score(sr)? / temperature))
}

/// Batch-mean rank-content loss, the per-item values and the gradient w.r.t. `sr`.
pub fn rank_content_grad(r: &mut RankerModel<f32>, sr: &Tensor<f32>, temperature: f64) -> (f64, Vec<f64>, Tensor<f32>) {
    let scores = r.forward(sr, Mode::Eval);
    let n = scores.len() as f64;
    let values: Vec<f64> = scores.iter().map(|&s| sigmoid(f64::from(s) / temperature)).collect();
    let grads: Vec<f32> = values.iter().map(|&v| (v * (1.0 - v) / temperature / n) as f32).collect();
    let dx = r.backward(&grads, false);
    (values.iter().sum::<f64>() / n, values, dx)
}

/// Mean squared pixel error and its gradient w.r.t. `sr`.
pub fn mse_grad(sr: &Tensor<f32>, hr: &Tensor<f32>) -> (f64, Tensor<f32>) {
    let diff = sr.sub(hr);
    let m = diff.len() as f64;
    let loss = diff.data().iter().map(|&d| f64::from(d) * f64::from(d)).sum::<f64>() / m;
    (loss, diff.scale((2.0 / m) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss_defaults() {
        let c = LossComponents { l_p: 1.0, l_g: 2.0, l_r: 0.5, l_m: 9.0 };
        let v = total_generator_loss(&c, &LossWeights::default()).unwrap();
        assert!((v - 1.025).abs() < 1e-12);
        let none = LossWeights { w_adv: 0.0, w_rank: 0.0, w_mse: 0.0 };
        assert_eq!(total_generator_loss(&c, &none).unwrap(), 1.0);
        let bad = LossComponents { l_r: f64::NAN, ..c };
        assert!(matches!(total_generator_loss(&bad, &none), Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn constant_discriminator() {
        let (d, g) = adversarial_terms(0.5, 0.5);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g - 2f64.ln()).abs() < 1e-12);
        let (d, g) = adversarial_terms(1.0, 0.0);
        assert!(d < 1e-5);
        assert!((g + DELTA.ln()).abs() < 1e-12);
    }

    #[test]
    fn logit_gradients_match_differences() {
        for z in [-3.0, -0.2, 0.0, 1.5, 4.0] {
            let h = 1e-6;
            let f = |z: f64| -d_probability(z).ln();
            let g = |z: f64| -(1.0 - d_probability(z)).ln();
            assert!((neg_log_d_grad(z) - (f(z + h) - f(z - h)) / (2.0 * h)).abs() < 1e-7);
            assert!((neg_log_not_d_grad(z) - (g(z + h) - g(z - h)) / (2.0 * h)).abs() < 1e-7);
        }
        assert_eq!(neg_log_d_grad(-40.0), 0.0);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
