//! Small neural-network toolkit over candle tensors: a seeded parameter
//! store, the layers shared by the geometry transformer and the policy, and
//! a versioned checkpoint container.
//!
//! Layers only use differentiable primitive ops (matmul, broadcast, exp,
//! sqrt, ...) so every model works in both f32 and f64.

mod checkpoint;
mod layers;
mod posenc;

pub use checkpoint::{file_fingerprint, read_checkpoint, write_checkpoint, CheckpointFile, TensorEntry};
pub use layers::{
    safe_norm, sigmoid, softmax_last, softplus, upsample2, Attention, Conv2d, CrossBlock, LayerNorm, Linear, Mlp,
};
pub use posenc::sincos_2d;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

/// Named, ordered trainable parameters with deterministic initialization.
pub struct ParamStore {
    vars: Vec<(String, Var)>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn push(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.push((name.to_string(), var));
        Ok(out)
    }

    /// Normal(0, std) truncated to ±2 std.
    pub fn trunc_normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("positive std");
        let values = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(&mut self.rng);
                if v.abs() <= 2.0 * std {
                    break v;
                }
            })
            .collect();
        self.push(name, values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.push(name, vec![value; n], shape)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn num_params(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Copies of every parameter as f64 vectors, in declaration order.
    pub fn snapshot(&self) -> Result<Vec<Vec<f64>>> {
        self.vars
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?))
            .collect()
    }

    pub fn restore(&self, snap: &[Vec<f64>]) -> Result<()> {
        if snap.len() != self.vars.len() {
            return Err(Error::Shape("snapshot does not match parameter list".into()));
        }
        for ((_, var), values) in self.vars.iter().zip(snap) {
            let t = Tensor::from_vec(values.clone(), var.shape(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw parameter bytes.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let flat = var.as_tensor().flatten_all()?;
            match self.dtype {
                DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| h.update(v.to_le_bytes())),
                _ => flat
                    .to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .for_each(|v| h.update(v.to_le_bytes())),
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn to_entries(&self) -> Result<Vec<TensorEntry>> {
        self.vars
            .iter()
            .map(|(name, var)| {
                Ok(TensorEntry {
                    name: name.clone(),
                    shape: var.dims().to_vec(),
                    data: var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
                })
            })
            .collect()
    }

    /// Overwrites every parameter from `entries`; names and shapes must match exactly.
    pub fn load_entries(&self, entries: &[TensorEntry]) -> Result<()> {
        if entries.len() != self.vars.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                self.vars.len()
            )));
        }
        for ((name, var), e) in self.vars.iter().zip(entries) {
            if &e.name != name || e.shape != var.dims() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {name} {:?}",
                    e.name,
                    e.shape,
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(e.data.clone(), e.shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

/// Global gradient-norm clipping; returns the pre-clip norm.
pub fn clip_grad_norm(
    grads: &mut candle_core::backprop::GradStore,
    vars: &[Var],
    max_norm: f64,
) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v) {
                grads.insert(v, g.affine(scale, 0.0)?);
            }
        }
    }
    Ok(norm)
}

/// Cosine decay from `base` to zero over `total` steps after a linear warmup.
pub fn cosine_lr(base: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if total == 0 {
        return base;
    }
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup.min(total)).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}
