//! Inference latency measurement.

use std::time::Instant;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::DualArmState;
use crate::geotrans::GeoModel;
use crate::policy::{PolicyAgent, PolicyModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub target: String,
    pub runs: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples_ms: Vec<f64>,
    pub code_version: String,
}

fn summarize(target: &str, warmup: usize, mut samples: Vec<f64>) -> BenchReport {
    let runs = samples.len();
    let mean = samples.iter().sum::<f64>() / runs as f64;
    let raw = samples.clone();
    samples.sort_by(f64::total_cmp);
    let median = if runs % 2 == 1 {
        samples[runs / 2]
    } else {
        0.5 * (samples[runs / 2 - 1] + samples[runs / 2])
    };
    BenchReport {
        target: target.to_string(),
        runs,
        warmup,
        mean_ms: mean,
        median_ms: median,
        min_ms: samples[0],
        max_ms: samples[runs - 1],
        samples_ms: raw,
        code_version: crate::CODE_VERSION.to_string(),
    }
}

fn time_runs(runs: usize, warmup: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    if runs == 0 {
        return Err(Error::Config("bench needs at least one run".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut out = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        out.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

/// Latency of one stereo point-map prediction.
pub fn bench_geometry(geo: &GeoModel, left: &RgbImage, right: &RgbImage, runs: usize, warmup: usize) -> Result<BenchReport> {
    let samples = time_runs(runs, warmup, || geo.predict(left, right).map(|_| ()))?;
    Ok(summarize("geometry", warmup, samples))
}

/// Latency of one policy query (geometry encoding + connector + decoder).
pub fn bench_policy(
    geo: &GeoModel,
    policy: &PolicyModel,
    left: &RgbImage,
    right: &RgbImage,
    state: &DualArmState,
    runs: usize,
    warmup: usize,
) -> Result<BenchReport> {
    let agent = PolicyAgent::new(geo, policy);
    let samples = time_runs(runs, warmup, || agent.predict_chunk(left, right, state).map(|_| ()))?;
    Ok(summarize("policy", warmup, samples))
}
