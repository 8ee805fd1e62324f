//! Geometry transformer: a shared patch encoder, a two-branch decoder whose
//! blocks cross-attend between the stereo views, and per-view dense heads
//! regressing left-frame point maps with confidence `C = 1 + exp(logit)`.

mod config;
mod loss;
mod model;
mod ply;
mod train;

pub use config::GeoConfig;
pub use loss::{
    batch_losses, loss_conf, loss_reg, median, normalize_scale, scale_aligned_errors, LossTerms, RegLoss, Targets,
};
pub use model::{GeoModel, HeadOutput, LatentPyramid, PointPrediction};
pub use ply::export_pointcloud;
pub use train::{
    evaluate_geo, metrics_writer, train_geo, GeoCheckpointMeta, GeoData, GeoStepMetrics, GeoTrainConfig,
    GeoTrainOutcome, GEO_CHECKPOINT_MAGIC, GEO_CHECKPOINT_VERSION,
};

#[cfg(test)]
mod tests;

#[cfg(test)]
pub(crate) mod tests_support {
    pub(crate) use super::tests::scene_samples;
}
