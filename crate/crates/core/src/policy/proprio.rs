use serde::{Deserialize, Serialize};

use crate::geom::DualArmState;

/// Position (3) + first two rotation columns (6) + jaw (1), per arm.
pub const PROPRIO_DIM: usize = 20;

pub fn proprio_vector(state: &DualArmState) -> [f64; PROPRIO_DIM] {
    let mut out = [0.0; PROPRIO_DIM];
    for side in 0..2 {
        let arm = state.arm(side);
        let o = side * 10;
        let r = &arm.pose.rotation;
        out[o..o + 3].copy_from_slice(arm.pose.translation.as_slice());
        for c in 0..2 {
            for row in 0..3 {
                out[o + 3 + 3 * c + row] = r[(row, c)];
            }
        }
        out[o + 9] = arm.jaw;
    }
    out
}

/// Per-channel affine standardization. Channels with (near) zero spread
/// keep unit scale so they stay centered but are not amplified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const MIN_STD: f64 = 1e-6;

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for c in 0..dim {
                sum[c] += r[c];
                sq[c] += r[c] * r[c];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = (0..dim)
            .map(|c| {
                let var = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
                let s = var.sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(c, v)| (v - self.mean[c]) / self.std[c]).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(c, v)| v * self.std[c] + self.mean[c]).collect()
    }
}
