use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geom::{ActionStep, ACTION_DIM};

/// Chunks issued at recent timesteps; only those still covering the current
/// step (age < k) are kept.
#[derive(Debug, Clone)]
pub struct EnsembleBuffer {
    chunk: usize,
    entries: VecDeque<(usize, Vec<ActionStep>)>,
}

impl EnsembleBuffer {
    pub fn new(chunk: usize) -> Self {
        Self {
            chunk,
            entries: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records the chunk predicted at timestep `issued` and evicts chunks that
    /// no longer cover `issued`.
    pub fn push(&mut self, issued: usize, chunk: Vec<ActionStep>) -> Result<()> {
        if chunk.len() != self.chunk {
            return Err(Error::Shape(format!("chunk has {} steps, expected {}", chunk.len(), self.chunk)));
        }
        self.entries.push_back((issued, chunk));
        self.entries.retain(|(t, _)| issued >= *t && issued - t < self.chunk);
        Ok(())
    }

    /// `(age, prediction for step t)` from every chunk covering `t`.
    pub fn predictions_for(&self, t: usize) -> Vec<(usize, &ActionStep)> {
        self.entries
            .iter()
            .filter(|(issued, _)| t >= *issued && t - issued < self.chunk)
            .map(|(issued, c)| (t - issued, &c[t - issued]))
            .collect()
    }
}

/// Normalized weights `exp(−m·age) / Σ`.
pub fn ensemble_weights(ages: &[usize], m: f64) -> Vec<f64> {
    let raw: Vec<f64> = ages.iter().map(|a| (-m * *a as f64).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Weighted componentwise average of the buffered predictions for step `t`.
pub fn ensemble(buffer: &EnsembleBuffer, t: usize, m: f64) -> Result<ActionStep> {
    let preds = buffer.predictions_for(t);
    if preds.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let ages: Vec<usize> = preds.iter().map(|(a, _)| *a).collect();
    let weights = ensemble_weights(&ages, m);
    let mut out = [0.0; ACTION_DIM];
    let mut lo = [f64::INFINITY; ACTION_DIM];
    let mut hi = [f64::NEG_INFINITY; ACTION_DIM];
    for ((_, p), w) in preds.iter().zip(&weights) {
        let a = p.to_array();
        for c in 0..ACTION_DIM {
            out[c] += w * a[c];
            lo[c] = lo[c].min(a[c]);
            hi[c] = hi[c].max(a[c]);
        }
    }
    // The exact average lies in [min, max]; clamp away summation rounding.
    for c in 0..ACTION_DIM {
        out[c] = out[c].clamp(lo[c], hi[c]);
    }
    ActionStep::from_slice(&out)
}
