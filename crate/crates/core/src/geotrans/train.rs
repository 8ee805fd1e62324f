use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::GeoConfig;
use super::loss::{batch_losses, median, scale_aligned_errors, Targets};
use super::model::GeoModel;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, cosine_lr, read_checkpoint, write_checkpoint};
use crate::scenegen::{read_sample, Sample};

pub const GEO_CHECKPOINT_MAGIC: [u8; 4] = *b"S3GC";
pub const GEO_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Linear warmup length, capped at a tenth of the run.
    pub warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps (0 = run all epochs).
    pub max_steps: usize,
}

impl Default for GeoTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr: 3e-4,
            weight_decay: 0.05,
            warmup_steps: 100,
            grad_clip: 1.0,
            seed: 0,
            max_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoStepMetrics {
    pub step: usize,
    pub loss_conf: f64,
    pub loss_reg_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoCheckpointMeta {
    pub config: GeoConfig,
    pub seed: u64,
    pub steps: usize,
    pub code_version: String,
    pub train: Option<GeoTrainConfig>,
}

/// Training samples, either resident or read from sample directories on demand.
pub enum GeoData<'a> {
    Memory(&'a [Sample]),
    Disk(&'a [PathBuf]),
}

impl GeoData<'_> {
    pub fn len(&self) -> usize {
        match self {
            GeoData::Memory(s) => s.len(),
            GeoData::Disk(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> Result<std::borrow::Cow<'_, Sample>> {
        Ok(match self {
            GeoData::Memory(s) => std::borrow::Cow::Borrowed(&s[i]),
            GeoData::Disk(p) => std::borrow::Cow::Owned(read_sample(&p[i])?),
        })
    }
}

impl GeoModel {
    pub fn save(&self, path: &Path, seed: u64, steps: usize, train: Option<&GeoTrainConfig>) -> Result<String> {
        let meta = GeoCheckpointMeta {
            config: self.config.clone(),
            seed,
            steps,
            code_version: crate::CODE_VERSION.to_string(),
            train: train.cloned(),
        };
        write_checkpoint(path, GEO_CHECKPOINT_MAGIC, GEO_CHECKPOINT_VERSION, &meta, &self.params().to_entries()?)
    }

    /// Loads a checkpoint; returns the model, its metadata and the file fingerprint.
    pub fn load(path: &Path, dtype: DType) -> Result<(Self, GeoCheckpointMeta, String)> {
        let file = read_checkpoint::<GeoCheckpointMeta>(path, GEO_CHECKPOINT_MAGIC, GEO_CHECKPOINT_VERSION)?;
        let model = GeoModel::new(&file.meta.config, file.meta.seed, dtype)?;
        model.params().load_entries(&file.tensors)?;
        Ok((model, file.meta, file.fingerprint))
    }
}

pub struct GeoTrainOutcome {
    pub metrics: Vec<GeoStepMetrics>,
    pub steps: usize,
}

/// Minimizes the confidence-weighted objective with AdamW and a cosine
/// schedule. Metrics go to `metrics_out` (JSONL) when given.
///
/// On a non-finite loss or gradient the update is skipped, the current
/// (last finite) parameters are written to `checkpoint_on_abort` and
/// [`Error::Diverged`] is returned.
pub fn train_geo(
    model: &GeoModel,
    data: &GeoData<'_>,
    cfg: &GeoTrainConfig,
    mut metrics_out: Option<&mut dyn Write>,
    checkpoint_on_abort: Option<&Path>,
) -> Result<GeoTrainOutcome> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let vars = model.params().vars();
    let mut opt = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    )?;
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut total = cfg.epochs * steps_per_epoch;
    if cfg.max_steps > 0 {
        total = total.min(cfg.max_steps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut metrics = Vec::with_capacity(total);
    let mut step = 0;
    'outer: for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= total {
                break 'outer;
            }
            let samples = chunk.iter().map(|i| data.get(*i)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Sample> = samples.iter().map(|s| s.as_ref()).collect();
            let pairs: Vec<_> = refs.iter().map(|s| (&s.left, &s.right)).collect();
            let (l, r) = model.patchify_pairs(&pairs)?;
            let targets = Targets::from_samples(&refs, model.dtype())?;
            let (_, out) = model.forward_patches(&l, &r)?;
            let terms = batch_losses(&out, &targets, model.config.alpha)?;
            let loss_conf = terms.objective.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let loss_reg_mean = terms.loss_reg_mean.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let mut grads = terms.objective.backward()?;
            let norm = clip_grad_norm(&mut grads, &vars, cfg.grad_clip)?;
            if !loss_conf.is_finite() || !norm.is_finite() {
                if let Some(path) = checkpoint_on_abort {
                    model.save(path, cfg.seed, step, Some(cfg))?;
                }
                return Err(Error::Diverged { step });
            }
            opt.set_learning_rate(cosine_lr(cfg.lr, step, total, cfg.warmup_steps.min(total / 10)));
            opt.step(&grads)?;
            let m = GeoStepMetrics {
                step,
                loss_conf,
                loss_reg_mean,
            };
            if let Some(w) = metrics_out.as_deref_mut() {
                let line = serde_json::to_string(&m).expect("metrics serialize");
                writeln!(w, "{line}").map_err(|e| Error::io("<metrics>", e))?;
            }
            log::debug!("geo step {step}: loss_conf {loss_conf:.5} loss_reg_mean {loss_reg_mean:.5}");
            metrics.push(m);
            step += 1;
        }
    }
    Ok(GeoTrainOutcome { metrics, steps: step })
}

/// Opens a JSONL metrics file for [`train_geo`].
pub fn metrics_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Median scale-aligned point error (meters) over all valid pixels of `data`.
pub fn evaluate_geo(model: &GeoModel, data: &GeoData<'_>, batch_size: usize) -> Result<f64> {
    let mut errs = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let samples = chunk.iter().map(|i| data.get(*i)).collect::<Result<Vec<_>>>()?;
        let pairs: Vec<_> = samples.iter().map(|s| (&s.left, &s.right)).collect();
        for (pred, s) in model.predict_batch(&pairs)?.iter().zip(&samples) {
            errs.extend(scale_aligned_errors(pred, [&s.pointmap_left, &s.pointmap_right]));
        }
    }
    median(&mut errs).ok_or(Error::EmptyMask)
}
