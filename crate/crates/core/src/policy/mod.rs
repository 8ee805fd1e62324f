//! Endoscope-centric action-chunking policy: spatial tokens from the
//! connector plus one proprioception token are cross-attended by `k`
//! learnable queries that decode the next `k` relative actions, executed
//! through exponential temporal ensembling.

mod agent;
mod config;
mod ensemble;
mod model;
mod proprio;
mod train;

pub use agent::PolicyAgent;
pub use config::{PolicyConfig, PolicyTrainConfig};
pub use ensemble::{ensemble, ensemble_weights, EnsembleBuffer};
pub use model::{loss_mse, positional_encoding, PolicyModel};
pub use proprio::{proprio_vector, Standardizer, MIN_STD, PROPRIO_DIM};
pub use train::{
    target_chunk, train_policy, PolicyCheckpointMeta, PolicyStepMetrics, PolicyTrainOutcome, TrainingEpisode,
    POLICY_CHECKPOINT_MAGIC, POLICY_CHECKPOINT_VERSION,
};
