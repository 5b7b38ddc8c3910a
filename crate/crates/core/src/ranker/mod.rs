//! Siamese ranker: scoring network, ranking and regression losses, training
//! loop and validation statistics.

mod loss;
mod model;
mod train;

pub use loss::{margin_rank_grad, margin_rank_loss, regression_grad, regression_loss, LossMode, RankLossConfig};
pub(crate) use model::vgg_trunk;
pub use model::{RankerArch, RankerModel, CHECKPOINT_KIND, MIN_SIDE};
pub use train::{
    level_distance, mean_abs_distance, score_distance_stat, train_ranker, validate_srocc, FnScorer, RankerConfig,
    RankerTrainConfig, ReportRow, ScoreModel, TrainingReport,
};
