use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::io::{list_samples, read_frames, sample_dir, write_json, write_sample, SampleMeta};
use super::render::Sample;
use crate::error::Result;
use crate::geotrans::GeoModel;

/// Samples whose retained fraction (over both views) falls below this are dropped.
pub const MIN_RETAINED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelReport {
    pub threshold: f64,
    pub processed: usize,
    pub retained: usize,
    pub discarded: usize,
    pub code_version: String,
}

/// An unlabeled stereo pair.
#[derive(Debug, Clone)]
pub struct Frames {
    pub left: RgbImage,
    pub right: RgbImage,
    pub meta: SampleMeta,
}

/// Labels `frames` with the model's own predictions, keeping pixels whose
/// confidence reaches `threshold`.
pub fn pseudo_label(model: &GeoModel, frames: &[Frames], threshold: f64) -> Result<(Vec<Sample>, PseudoLabelReport)> {
    let mut out = Vec::new();
    let mut discarded = 0;
    for f in frames {
        let pred = model.predict(&f.left, &f.right)?;
        let maps = [pred.pointmap(0, threshold), pred.pointmap(1, threshold)];
        let kept = maps[0].valid_count() + maps[1].valid_count();
        if (kept as f64) < MIN_RETAINED_FRACTION * (maps[0].len() + maps[1].len()) as f64 {
            discarded += 1;
            continue;
        }
        let [pointmap_left, pointmap_right] = maps;
        out.push(Sample {
            left: f.left.clone(),
            right: f.right.clone(),
            pointmap_left,
            pointmap_right,
            rig: f.meta.rig(),
            seed: f.meta.seed,
            scene_id: f.meta.scene_id,
        });
    }
    let report = PseudoLabelReport {
        threshold,
        processed: frames.len(),
        retained: out.len(),
        discarded,
        code_version: crate::CODE_VERSION.to_string(),
    };
    Ok((out, report))
}

/// Pseudo-labels every sample directory under `input` into `output`,
/// writing `pseudo_label.json` with the report.
pub fn pseudo_label_dataset(model: &GeoModel, input: &Path, output: &Path, threshold: f64) -> Result<PseudoLabelReport> {
    let mut frames = Vec::new();
    for dir in list_samples(input)? {
        let (left, right, meta) = read_frames(&dir)?;
        frames.push(Frames { left, right, meta });
    }
    let (samples, report) = pseudo_label(model, &frames, threshold)?;
    std::fs::create_dir_all(output).map_err(|e| crate::Error::io(output, e))?;
    for s in &samples {
        write_sample(s, &sample_dir(output, s.scene_id))?;
    }
    write_json(&output.join("pseudo_label.json"), &report)?;
    Ok(report)
}
