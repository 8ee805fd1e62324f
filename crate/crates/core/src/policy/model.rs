use candle_core::{DType, Device, Tensor};

use super::config::PolicyConfig;
use super::proprio::{Standardizer, PROPRIO_DIM};
use crate::connector::{Connector, ConnectorConfig, SpatialTokens};
use crate::error::{Error, Result};
use crate::geom::{ActionStep, ACTION_DIM, JAW_CHANNELS};
use crate::geotrans::LatentPyramid;
use crate::nn::{sigmoid, sincos_2d, CrossBlock, LayerNorm, Linear, ParamStore, INIT_STD};

/// Fixed 2-D encodings over the stereo-concatenated grid `rows × 2·cols`,
/// as `[rows·2cols, width]` row-major.
pub fn positional_encoding(rows: usize, cols_per_view: usize, width: usize) -> Result<Vec<f32>> {
    sincos_2d(rows, 2 * cols_per_view, width)
}

/// Connector + cross-attention decoder over `k` learnable queries.
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub connector_config: ConnectorConfig,
    pub action_stats: Standardizer,
    pub proprio_stats: Standardizer,
    params: ParamStore,
    connector: Connector,
    queries: Tensor,
    proprio_proj: Linear,
    positions: Tensor,
    blocks: Vec<CrossBlock>,
    ln_out: LayerNorm,
    head: Linear,
    jaw_mask: Tensor,
    other_mask: Tensor,
    jaw_scale: Tensor,
    jaw_shift: Tensor,
}

impl PolicyModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: &PolicyConfig,
        connector_config: &ConnectorConfig,
        geo_width: usize,
        grid: (usize, usize),
        action_stats: Standardizer,
        proprio_stats: Standardizer,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        if action_stats.dim() != ACTION_DIM || proprio_stats.dim() != PROPRIO_DIM {
            return Err(Error::Shape("standardizer dimensions do not match action/proprio layout".into()));
        }
        let mut ps = ParamStore::new(seed, dtype);
        let w = config.width;
        let connector = Connector::new(&mut ps, connector_config, geo_width, w, grid)?;
        let queries = ps.trunc_normal("policy.queries", &[config.chunk, w], INIT_STD)?;
        let proprio_proj = Linear::new(&mut ps, "policy.proprio", PROPRIO_DIM, w)?;
        let blocks = (0..config.depth)
            .map(|i| CrossBlock::new(&mut ps, &format!("policy.block{i}"), w, config.heads, config.mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        let ln_out = LayerNorm::new(&mut ps, "policy.ln_out", w)?;
        let head = Linear::new(&mut ps, "policy.head", w, ACTION_DIM)?;
        let dev = Device::Cpu;
        let (rows, cols) = grid;
        let positions = Tensor::from_vec(positional_encoding(rows, cols, w)?, (1, rows * 2 * cols, w), &dev)?.to_dtype(dtype)?;
        let mut jaw = [0.0f64; ACTION_DIM];
        let mut scale = [0.0f64; ACTION_DIM];
        let mut shift = [0.0f64; ACTION_DIM];
        for c in JAW_CHANNELS {
            jaw[c] = 1.0;
            scale[c] = config.jaw_max / action_stats.std[c];
            shift[c] = -action_stats.mean[c] / action_stats.std[c];
        }
        let t = |v: [f64; ACTION_DIM]| -> Result<Tensor> { Ok(Tensor::new(&v, &dev)?.to_dtype(dtype)?) };
        let other = jaw.map(|j| 1.0 - j);
        Ok(Self {
            config: config.clone(),
            connector_config: connector_config.clone(),
            action_stats,
            proprio_stats,
            params: ps,
            connector,
            queries,
            proprio_proj,
            positions,
            blocks,
            ln_out,
            head,
            jaw_mask: t(jaw)?,
            other_mask: t(other)?,
            jaw_scale: t(scale)?,
            jaw_shift: t(shift)?,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn spatial_tokens(&self, pyramid: &LatentPyramid) -> Result<SpatialTokens> {
        self.connector.forward(pyramid)
    }

    /// Standardized proprio rows → `[B, PROPRIO_DIM]`.
    pub fn proprio_tensor(&self, rows: &[[f64; PROPRIO_DIM]]) -> Result<Tensor> {
        let data: Vec<f64> = rows.iter().flat_map(|r| self.proprio_stats.apply(r)).collect();
        Ok(Tensor::from_vec(data, (rows.len(), PROPRIO_DIM), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// Standardized action chunk `[B, k, 14]`. Jaw channels are the
    /// standardized image of `sigmoid(h)·jaw_max ∈ [0, jaw_max]`.
    pub fn forward(&self, pyramid: &LatentPyramid, proprio: &Tensor) -> Result<Tensor> {
        let spatial = self.spatial_tokens(pyramid)?;
        self.forward_tokens(&spatial, proprio)
    }

    pub fn forward_tokens(&self, spatial: &SpatialTokens, proprio: &Tensor) -> Result<Tensor> {
        let (b, pd) = proprio.dims2()?;
        if pd != PROPRIO_DIM {
            return Err(Error::Shape(format!("proprio width {pd}, expected {PROPRIO_DIM}")));
        }
        let w = self.config.width;
        let proprio_token = self.proprio_proj.forward(proprio)?.unsqueeze(1)?;
        let contexts = spatial
            .sets
            .iter()
            .map(|s| {
                let (sb, n, sw) = s.dims3()?;
                if sw != w || sb != b || n != self.positions.dims3()?.1 {
                    return Err(Error::Shape(format!(
                        "spatial tokens {:?} do not match batch {b}, width {w}, {} positions",
                        s.dims(),
                        self.positions.dims3()?.1
                    )));
                }
                Ok(Tensor::cat(&[&s.broadcast_add(&self.positions)?, &proprio_token], 1)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let spatial_ctx = SpatialTokens {
            variant: spatial.variant,
            sets: contexts,
        };
        let mut x = self.queries.unsqueeze(0)?.broadcast_as((b, self.config.chunk, w))?.contiguous()?;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x, spatial_ctx.for_block(i))?;
        }
        let h = self.head.forward(&self.ln_out.forward(&x)?)?;
        let jaw = sigmoid(&h)?.broadcast_mul(&self.jaw_scale)?.broadcast_add(&self.jaw_shift)?;
        Ok((h.broadcast_mul(&self.other_mask)? + jaw.broadcast_mul(&self.jaw_mask)?)?)
    }

    /// Physical action chunks from a standardized prediction `[B, k, 14]`.
    pub fn decode_chunks(&self, pred: &Tensor) -> Result<Vec<Vec<ActionStep>>> {
        let rows = pred.to_dtype(DType::F64)?.to_vec3::<f64>()?;
        rows.iter()
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|a| {
                        let mut v = self.action_stats.invert(a);
                        for c in JAW_CHANNELS {
                            v[c] = v[c].clamp(0.0, self.config.jaw_max);
                        }
                        ActionStep::from_slice(&v)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Mean squared error over non-padded steps and all channels.
/// `mask` is `[B, k]` with 1 for real steps.
pub fn loss_mse(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    let count = mask.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if count <= 0.0 {
        return Err(Error::AllPadded);
    }
    let channels = pred.dims3()?.2 as f64;
    let sq = (pred - target)?.sqr()?.sum(2)?;
    Ok(((sq * mask)?.sum_all()? / (count * channels))?)
}
