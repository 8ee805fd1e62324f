use image::RgbImage;

use super::ensemble::{ensemble, EnsembleBuffer};
use super::model::PolicyModel;
use super::proprio::proprio_vector;
use crate::error::Result;
use crate::geom::{ActionStep, DualArmState};
use crate::geotrans::GeoModel;

/// Closed-loop controller: queries the policy every step and executes the
/// temporally ensembled action.
pub struct PolicyAgent<'a> {
    geo: &'a GeoModel,
    policy: &'a PolicyModel,
    buffer: EnsembleBuffer,
    t: usize,
}

impl<'a> PolicyAgent<'a> {
    pub fn new(geo: &'a GeoModel, policy: &'a PolicyModel) -> Self {
        Self {
            geo,
            policy,
            buffer: EnsembleBuffer::new(policy.config.chunk),
            t: 0,
        }
    }

    /// Raw chunk for one observation (no ensembling).
    pub fn predict_chunk(&self, left: &RgbImage, right: &RgbImage, measured: &DualArmState) -> Result<Vec<ActionStep>> {
        let pyramid = self.geo.pyramid(&[(left, right)])?;
        let proprio = self.policy.proprio_tensor(&[proprio_vector(measured)])?;
        let pred = self.policy.forward(&pyramid, &proprio)?;
        Ok(self.policy.decode_chunks(&pred)?.pop().unwrap())
    }

    pub fn act(&mut self, left: &RgbImage, right: &RgbImage, measured: &DualArmState) -> Result<ActionStep> {
        let chunk = self.predict_chunk(left, right, measured)?;
        self.buffer.push(self.t, chunk)?;
        let a = ensemble(&self.buffer, self.t, self.policy.config.ensemble_m)?;
        self.t += 1;
        Ok(a)
    }
}
