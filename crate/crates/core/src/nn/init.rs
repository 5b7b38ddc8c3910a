use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{Conv2d, Linear, Scalar};

/// Independent generator for a named stream under a root seed.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// `n` samples from `N(0, scale^2 * 2 / fan_in)`.
pub fn he_normal<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize, scale: f64) -> Vec<T> {
    let std = scale * (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::c(dist.sample(rng))).collect()
}

impl<T: Scalar> Conv2d<T> {
    pub fn init_he(&mut self, rng: &mut ChaCha8Rng, scale: f64) -> &mut Self {
        self.weight.value = he_normal(rng, self.fan_in(), self.weight.len(), scale);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
        self
    }

    pub fn with_init(mut self, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        self.init_he(rng, scale);
        self
    }
}

impl<T: Scalar> Linear<T> {
    pub fn with_init(mut self, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        self.weight.value = he_normal(rng, self.in_features, self.weight.len(), scale);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
        self
    }
}
