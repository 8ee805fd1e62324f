use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{PolicyConfig, PolicyTrainConfig};
use super::model::{loss_mse, PolicyModel};
use super::proprio::{proprio_vector, Standardizer, PROPRIO_DIM};
use crate::connector::ConnectorConfig;
use crate::error::{Error, Result};
use crate::geom::{relative_action, ActionStep, DualArmState, ACTION_DIM};
use crate::geotrans::{GeoConfig, GeoModel, LatentPyramid};
use crate::nn::{clip_grad_norm, cosine_lr, read_checkpoint, write_checkpoint};

pub const POLICY_CHECKPOINT_MAGIC: [u8; 4] = *b"S3PC";
pub const POLICY_CHECKPOINT_VERSION: u32 = 1;

/// Observations and measured states at steps `0..=T` of one demonstration.
#[derive(Debug, Clone)]
pub struct TrainingEpisode {
    pub frames: Vec<(RgbImage, RgbImage)>,
    pub measured: Vec<DualArmState>,
}

impl TrainingEpisode {
    /// Number of executed actions `T`.
    pub fn len(&self) -> usize {
        self.measured.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Relative actions between consecutive measured states.
    pub fn actions(&self) -> Vec<ActionStep> {
        self.measured.windows(2).map(|w| relative_action(&w[0], &w[1])).collect()
    }
}

/// Target chunk at step `t`: `actions[t..t+k]`, padded past the end with the
/// zero-delta action holding the terminal jaws. The mask marks real steps.
pub fn target_chunk(actions: &[ActionStep], terminal: &DualArmState, t: usize, k: usize) -> (Vec<ActionStep>, Vec<bool>) {
    let pad = ActionStep::hold(terminal.left.jaw, terminal.right.jaw);
    (0..k)
        .map(|j| match actions.get(t + j) {
            Some(a) => (*a, true),
            None => (pad, false),
        })
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyStepMetrics {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpointMeta {
    pub policy: PolicyConfig,
    pub connector: ConnectorConfig,
    pub geo_config: GeoConfig,
    pub geo_fingerprint: String,
    pub action_stats: Standardizer,
    pub proprio_stats: Standardizer,
    pub seed: u64,
    pub code_version: String,
    pub train: Option<PolicyTrainConfig>,
}

impl PolicyModel {
    pub fn save(&self, path: &Path, meta: &PolicyCheckpointMeta) -> Result<String> {
        write_checkpoint(path, POLICY_CHECKPOINT_MAGIC, POLICY_CHECKPOINT_VERSION, meta, &self.params().to_entries()?)
    }

    /// Loads a policy; `geo_fingerprint` must match the checkpoint's unless
    /// `allow_mismatch` is set.
    pub fn load(path: &Path, geo_fingerprint: &str, allow_mismatch: bool) -> Result<(Self, PolicyCheckpointMeta)> {
        let file = read_checkpoint::<PolicyCheckpointMeta>(path, POLICY_CHECKPOINT_MAGIC, POLICY_CHECKPOINT_VERSION)?;
        let meta = file.meta;
        if meta.geo_fingerprint != geo_fingerprint && !allow_mismatch {
            return Err(Error::FingerprintMismatch {
                expected: meta.geo_fingerprint.clone(),
                found: geo_fingerprint.to_string(),
            });
        }
        let model = PolicyModel::new(
            &meta.policy,
            &meta.connector,
            meta.geo_config.decoder_width,
            meta.geo_config.grid(),
            meta.action_stats.clone(),
            meta.proprio_stats.clone(),
            meta.seed,
            DType::F32,
        )?;
        model.params().load_entries(&file.tensors)?;
        Ok((model, meta))
    }
}

/// Pyramids for every frame, cached when within budget.
struct PyramidSource<'a> {
    geo: &'a GeoModel,
    cache: Option<Vec<LatentPyramid>>,
}

impl PyramidSource<'_> {
    fn batch(&self, frames: &[&(RgbImage, RgbImage)], ids: &[usize]) -> Result<LatentPyramid> {
        match &self.cache {
            Some(cache) => {
                let levels = (0..4)
                    .map(|l| -> Result<[Tensor; 2]> {
                        let cat = |v: usize| -> Result<Tensor> {
                            let parts: Vec<&Tensor> = ids.iter().map(|i| &cache[*i].levels[l][v]).collect();
                            Ok(Tensor::cat(&parts, 0)?)
                        };
                        Ok([cat(0)?, cat(1)?])
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LatentPyramid { levels })
            }
            None => {
                let pairs: Vec<_> = frames.iter().map(|f| (&f.0, &f.1)).collect();
                self.geo.pyramid(&pairs)
            }
        }
    }
}

fn pyramid_bytes(geo: &GeoConfig) -> usize {
    4 * 2 * geo.tokens_per_view() * geo.decoder_width * 4
}

pub struct PolicyTrainOutcome {
    pub model: PolicyModel,
    pub metrics: Vec<PolicyStepMetrics>,
    pub meta: PolicyCheckpointMeta,
}

/// Trains connector + decoder on demonstration chunks with the geometry
/// transformer frozen. The geometry parameter digest is compared before and
/// after; any change aborts with [`Error::FrozenDrift`].
pub fn train_policy(
    geo: &GeoModel,
    geo_fingerprint: &str,
    episodes: &[TrainingEpisode],
    policy_cfg: &PolicyConfig,
    connector_cfg: &ConnectorConfig,
    cfg: &PolicyTrainConfig,
    mut metrics_out: Option<&mut dyn Write>,
) -> Result<PolicyTrainOutcome> {
    let frozen = geo.params().digest()?;
    let samples: Vec<(usize, usize)> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t)))
        .collect();
    if samples.is_empty() {
        return Err(Error::Config("no demonstration steps to train on".into()));
    }
    for ep in episodes {
        if ep.frames.len() != ep.measured.len() {
            return Err(Error::Shape(format!(
                "episode has {} frames but {} states",
                ep.frames.len(),
                ep.measured.len()
            )));
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let actions: Vec<Vec<ActionStep>> = episodes.iter().map(|e| e.actions()).collect();
    let action_rows: Vec<[f64; ACTION_DIM]> = actions.iter().flatten().map(|a| a.to_array()).collect();
    let action_stats = Standardizer::fit(action_rows.iter().map(|r| r.as_slice()), ACTION_DIM);
    let proprio_rows: Vec<[f64; PROPRIO_DIM]> = samples.iter().map(|(e, t)| proprio_vector(&episodes[*e].measured[*t])).collect();
    let proprio_stats = Standardizer::fit(proprio_rows.iter().map(|r| r.as_slice()), PROPRIO_DIM);

    let model = PolicyModel::new(
        policy_cfg,
        connector_cfg,
        geo.config.decoder_width,
        geo.config.grid(),
        action_stats.clone(),
        proprio_stats.clone(),
        cfg.seed,
        DType::F32,
    )?;

    let frames: Vec<&(RgbImage, RgbImage)> = samples.iter().map(|(e, t)| &episodes[*e].frames[*t]).collect();
    let budget = cfg.cache_budget_mb.saturating_mul(1 << 20);
    let cache = if frames.len().saturating_mul(pyramid_bytes(&geo.config)) <= budget {
        let mut all = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(16) {
            let pairs: Vec<_> = chunk.iter().map(|f| (&f.0, &f.1)).collect();
            let pyr = geo.pyramid(&pairs)?;
            for b in 0..chunk.len() {
                all.push(LatentPyramid {
                    levels: pyr
                        .levels
                        .iter()
                        .map(|[l, r]| -> Result<[Tensor; 2]> { Ok([l.narrow(0, b, 1)?.contiguous()?, r.narrow(0, b, 1)?.contiguous()?]) })
                        .collect::<Result<Vec<_>>>()?,
                });
            }
        }
        Some(all)
    } else {
        None
    };
    let source = PyramidSource { geo, cache };

    let k = policy_cfg.chunk;
    let targets: Vec<(Vec<f64>, Vec<f64>)> = samples
        .iter()
        .map(|(e, t)| {
            let ep = &episodes[*e];
            let (chunk, mask) = target_chunk(&actions[*e], ep.measured.last().unwrap(), *t, k);
            let values = chunk.iter().flat_map(|a| action_stats.apply(&a.to_array())).collect();
            let mask = mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
            (values, mask)
        })
        .collect();

    let vars = model.params().vars();
    let mut opt = AdamW::new(
        vars.clone(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut metrics = Vec::with_capacity(cfg.steps);
    let dev = Device::Cpu;
    for step in 0..cfg.steps {
        if order.len() < cfg.batch_size.min(samples.len()) {
            let mut fresh: Vec<usize> = (0..samples.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
        }
        let ids: Vec<usize> = order.drain(..cfg.batch_size.min(samples.len())).collect();
        let batch_frames: Vec<_> = ids.iter().map(|i| frames[*i]).collect();
        let pyramid = source.batch(&batch_frames, &ids)?;
        let proprio = model.proprio_tensor(&ids.iter().map(|i| proprio_rows[*i]).collect::<Vec<_>>())?;
        let b = ids.len();
        let tgt: Vec<f64> = ids.iter().flat_map(|i| targets[*i].0.iter().copied()).collect();
        let mask: Vec<f64> = ids.iter().flat_map(|i| targets[*i].1.iter().copied()).collect();
        let tgt = Tensor::from_vec(tgt, (b, k, ACTION_DIM), &dev)?.to_dtype(DType::F32)?;
        let mask = Tensor::from_vec(mask, (b, k), &dev)?.to_dtype(DType::F32)?;
        let pred = model.forward(&pyramid, &proprio)?;
        let loss = loss_mse(&pred, &tgt, &mask)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let mut grads = loss.backward()?;
        let norm = clip_grad_norm(&mut grads, &vars, cfg.grad_clip)?;
        if !value.is_finite() || !norm.is_finite() {
            return Err(Error::Diverged { step });
        }
        opt.set_learning_rate(cosine_lr(cfg.lr, step, cfg.steps, cfg.warmup_steps.min(cfg.steps / 10)));
        opt.step(&grads)?;
        let m = PolicyStepMetrics { step, loss: value };
        if let Some(w) = metrics_out.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&m).expect("metrics serialize")).map_err(|e| Error::io("<metrics>", e))?;
        }
        metrics.push(m);
    }
    if geo.params().digest()? != frozen {
        return Err(Error::FrozenDrift(format!("geometry digest changed from {frozen}")));
    }
    let meta = PolicyCheckpointMeta {
        policy: policy_cfg.clone(),
        connector: connector_cfg.clone(),
        geo_config: geo.config.clone(),
        geo_fingerprint: geo_fingerprint.to_string(),
        action_stats,
        proprio_stats,
        seed: cfg.seed,
        code_version: crate::CODE_VERSION.to_string(),
        train: Some(cfg.clone()),
    };
    Ok(PolicyTrainOutcome { model, metrics, meta })
}
