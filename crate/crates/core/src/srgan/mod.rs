//! Adversarial super-resolution with a frozen ranker as an extra content loss.

mod data;
mod losses;
mod models;
mod train;

pub use data::PairedDataset;
pub use losses::{
    adversarial_losses, adversarial_terms, d_probability, mse_grad, neg_log_d_grad, neg_log_not_d_grad, perceptual_loss,
    perceptual_loss_grad, rank_content_grad, rank_content_loss, sigmoid, total_generator_loss, LossComponents,
    LossWeights, DELTA,
};
pub use models::{
    upsample_bilinear, DiscriminatorArch, DiscriminatorModel, FeatureArch, FeatureExtractor, GeneratorArch,
    GeneratorModel, DISCRIMINATOR_KIND, FALLBACK_SEED, FEATURES_KIND, GENERATOR_KIND, IMAGENET_MEAN, IMAGENET_STD,
    MIN_LR_SIDE, SCALE,
};
pub use train::{
    generator_grad, train_srgan, FrozenCheck, GeneratorGrad, ModelBundle, SrLogRow, SrTrainConfig, SrTrainReport,
    SrganConfig, ValPoint,
};
