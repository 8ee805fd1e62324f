use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Chunk length k; also the number of learnable queries.
    pub chunk: usize,
    /// Temporal-ensembling coefficient m in `w_i = exp(−m·i)`.
    pub ensemble_m: f64,
    /// Upper bound of the jaw angle (radians); predictions are squashed into `[0, jaw_max]`.
    pub jaw_max: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            width: 256,
            heads: 4,
            mlp_ratio: 4,
            chunk: 20,
            ensemble_m: 0.1,
            jaw_max: 1.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("policy: {m}")));
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.chunk == 0 {
            return bad("chunk must be >= 1".into());
        }
        if !(self.ensemble_m >= 0.0 && self.ensemble_m.is_finite()) {
            return bad(format!("ensemble_m {} must be finite and >= 0", self.ensemble_m));
        }
        if self.heads == 0 || self.width % self.heads != 0 || self.width % 4 != 0 {
            return bad(format!("width {} must be divisible by heads {} and by 4", self.width, self.heads));
        }
        if !(self.jaw_max > 0.0) || self.mlp_ratio == 0 {
            return bad("jaw_max and mlp_ratio must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Memory budget for cached latent pyramids; frames beyond it are
    /// re-encoded per batch.
    pub cache_budget_mb: usize,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 1e-4,
            warmup_steps: 100,
            grad_clip: 1.0,
            seed: 0,
            cache_budget_mb: 2048,
        }
    }
}
