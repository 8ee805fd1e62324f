use candle_core::{Tensor, D};

use super::{ParamStore, INIT_STD};
use crate::error::Result;

/// `x · W + b` over the last dimension; `W` is stored `[in, out]`.
#[derive(Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = ps.trunc_normal(&format!("{name}.weight"), &[in_dim, out_dim], INIT_STD)?;
        let bias = Some(ps.constant(&format!("{name}.bias"), &[out_dim], 0.0)?);
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let lead: usize = dims[..dims.len() - 1].iter().product();
        let flat = x.reshape((lead, self.in_dim))?;
        let mut y = flat.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: ps.constant(&format!("{name}.beta"), &[dim], 0.0)?,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let inv = (var + self.eps)?.sqrt()?.recip()?;
        Ok(xc.broadcast_mul(&inv)?.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Softmax over the last dimension, built from differentiable primitives.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// `log(1 + exp(x))`, stable for large `|x|`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((pos + tail)?)
}

/// Logistic sigmoid as `(1 + tanh(x/2)) / 2`, finite for any input.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Euclidean norm over the last dimension, shifted so that it is exactly zero
/// (with a finite gradient) at the origin: `sqrt(‖x‖² + ε) − sqrt(ε)`.
pub fn safe_norm(x: &Tensor) -> Result<Tensor> {
    const EPS: f64 = 1e-20;
    let sq = x.sqr()?.sum(D::Minus1)?;
    Ok(((sq + EPS)?.sqrt()? - EPS.sqrt())?)
}

/// Multi-head attention; queries from `x`, keys/values from `context`.
#[derive(Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim)?,
            k: Linear::new(ps, &format!("{name}.k"), dim, dim)?,
            v: Linear::new(ps, &format!("{name}.v"), dim, dim)?,
            o: Linear::new(ps, &format!("{name}.o"), dim, dim)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `x: [B, Nq, D]`, `context: [B, Nk, D]` → `[B, Nq, D]`.
    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (b, nq, d) = x.dims3()?;
        let q = self.split(&self.q.forward(x)?)?;
        let k = self.split(&self.k.forward(context)?)?;
        let v = self.split(&self.v.forward(context)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, nq, d))?;
        self.o.forward(&out)
    }
}

/// Two-layer perceptron with a tanh-approximated GELU.
#[derive(Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, out)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Pre-norm block: self-attention, cross-attention to `context`, MLP; each
/// with a residual connection.
#[derive(Clone)]
pub struct CrossBlock {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    ln_ctx: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    mlp: Mlp,
}

impl CrossBlock {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), width)?,
            self_attn: Attention::new(ps, &format!("{name}.self_attn"), width, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), width)?,
            ln_ctx: LayerNorm::new(ps, &format!("{name}.ln_ctx"), width)?,
            cross_attn: Attention::new(ps, &format!("{name}.cross_attn"), width, heads)?,
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), width)?,
            mlp: Mlp::new(ps, &format!("{name}.mlp"), width, width * mlp_ratio, width)?,
        })
    }

    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.self_attn.forward(&h, &h)?)?;
        let ctx = self.ln_ctx.forward(context)?;
        let x = (&x + self.cross_attn.forward(&self.ln2.forward(&x)?, &ctx)?)?;
        Ok((&x + self.mlp.forward(&self.ln3.forward(&x)?)?)?)
    }
}

/// Square-kernel 2-D convolution with "same" padding, stride 1.
#[derive(Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv2d {
    pub fn new(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.trunc_normal(&format!("{name}.weight"), &[cout, cin, kernel, kernel], INIT_STD)?,
            bias: ps.constant(&format!("{name}.bias"), &[1, cout, 1, 1], 0.0)?,
            padding: kernel / 2,
        })
    }

    /// `[B, C, H, W]` → `[B, C', H, W]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(&self.weight, self.padding, 1, 1, 1)?.broadcast_add(&self.bias)?)
    }
}

/// Nearest-neighbour 2× upsampling of `[B, C, H, W]` via broadcasting.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((b, c, 2 * h, 2 * w))?)
}
