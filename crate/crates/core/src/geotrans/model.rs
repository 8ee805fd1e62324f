use candle_core::{DType, Device, Tensor};
use image::RgbImage;

use super::config::GeoConfig;
use crate::error::{Error, Result};
use crate::nn::{sincos_2d, softplus, upsample2, Attention, Conv2d, CrossBlock, LayerNorm, Linear, Mlp, ParamStore};

/// Decoder embeddings tapped at the configured layers: `levels[l][view]` is `[B, N, D]`.
#[derive(Debug, Clone)]
pub struct LatentPyramid {
    pub levels: Vec<[Tensor; 2]>,
}

impl LatentPyramid {
    pub fn detach(&self) -> Self {
        Self {
            levels: self.levels.iter().map(|[l, r]| [l.detach(), r.detach()]).collect(),
        }
    }

    pub fn tokens(&self) -> Result<usize> {
        Ok(self.levels[0][0].dims3()?.1)
    }
}

/// Raw head output: `points[v]` is `[B, H·W, 3]`, `logits[v]` is `[B, H·W]`.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub points: [Tensor; 2],
    pub logits: [Tensor; 2],
}

impl HeadOutput {
    /// `C = 1 + exp(logit)`.
    pub fn confidence(&self, view: usize) -> Result<Tensor> {
        Ok((self.logits[view].exp()? + 1.0)?)
    }

    /// `log C`, evaluated as `softplus(logit)`.
    pub fn log_confidence(&self, view: usize) -> Result<Tensor> {
        softplus(&self.logits[view])
    }
}

/// Host-side prediction for one stereo pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPrediction {
    pub width: usize,
    pub height: usize,
    pub points: [Vec<[f32; 3]>; 2],
    pub confidence: [Vec<f32>; 2],
}

impl PointPrediction {
    pub fn pointmap(&self, view: usize, threshold: f64) -> crate::geom::PointMap {
        let mut map = crate::geom::PointMap::new(self.width, self.height);
        for i in 0..map.len() {
            if self.confidence[view][i] as f64 >= threshold {
                map.points[i] = self.points[view][i];
                map.valid[i] = true;
            }
        }
        map
    }
}

#[derive(Clone)]
struct EncoderBlock {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl EncoderBlock {
    fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), width)?,
            attn: Attention::new(ps, &format!("{name}.attn"), width, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), width)?,
            mlp: Mlp::new(ps, &format!("{name}.mlp"), width, width * ratio, width)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h)?)?;
        Ok((&x + self.mlp.forward(&self.ln2.forward(&x)?)?)?)
    }
}

/// `x + conv(gelu(x))`.
#[derive(Clone)]
struct Refine {
    conv: Conv2d,
}

impl Refine {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x + self.conv.forward(&x.gelu()?)?)?)
    }
}

/// Simplified dense-prediction head: per-level projection, coarse-to-fine
/// upsample-and-sum with residual convolutions, then a 4-channel output conv.
#[derive(Clone)]
struct PointHead {
    norms: Vec<LayerNorm>,
    projections: Vec<Linear>,
    refine: Vec<Refine>,
    tail: Vec<Refine>,
    out: Conv2d,
    offset: Tensor,
    grid: (usize, usize),
    channels: usize,
    upsamples: usize,
}

impl PointHead {
    fn new(ps: &mut ParamStore, name: &str, config: &GeoConfig) -> Result<Self> {
        let c = config.head_channels;
        let upsamples = config.patch_size.trailing_zeros() as usize;
        let mut norms = Vec::new();
        let mut projections = Vec::new();
        for l in 0..4 {
            norms.push(LayerNorm::new(ps, &format!("{name}.level{l}.ln"), config.decoder_width)?);
            projections.push(Linear::new(ps, &format!("{name}.level{l}.proj"), config.decoder_width, c)?);
        }
        let mut refine = Vec::new();
        for l in 0..4 {
            refine.push(Refine {
                conv: Conv2d::new(ps, &format!("{name}.refine{l}"), c, c, 3)?,
            });
        }
        let mut tail = Vec::new();
        for i in 3.min(upsamples)..upsamples {
            tail.push(Refine {
                conv: Conv2d::new(ps, &format!("{name}.tail{i}"), c, c, 3)?,
            });
        }
        let out = Conv2d::new(ps, &format!("{name}.out"), c, 4, 3)?;
        let offset = Tensor::new(&[0.0f64, 0.0, 1.0, 0.0], ps.device())?
            .to_dtype(ps.dtype())?
            .reshape((1, 4, 1, 1))?;
        Ok(Self {
            norms,
            projections,
            refine,
            tail,
            out,
            offset,
            grid: config.grid(),
            channels: c,
            upsamples,
        })
    }

    fn level_map(&self, l: usize, tokens: &Tensor) -> Result<Tensor> {
        let (b, _, _) = tokens.dims3()?;
        let (gh, gw) = self.grid;
        let y = self.projections[l].forward(&self.norms[l].forward(tokens)?)?;
        Ok(y.reshape((b, gh, gw, self.channels))?.permute((0, 3, 1, 2))?.contiguous()?)
    }

    /// `levels[l]` is `[B, N, D]` for one view; returns `[B, 4, H, W]`.
    fn forward(&self, levels: &[&Tensor]) -> Result<Tensor> {
        let mut f = self.refine[0].forward(&self.level_map(3, levels[3])?)?;
        let mut scale = 0;
        for (step, l) in [2usize, 1, 0].into_iter().enumerate() {
            if scale < self.upsamples {
                f = upsample2(&f)?;
                scale += 1;
            }
            let mut skip = self.level_map(l, levels[l])?;
            for _ in 0..scale {
                skip = upsample2(&skip)?;
            }
            f = self.refine[step + 1].forward(&(f + skip)?)?;
        }
        for t in &self.tail {
            f = t.forward(&upsample2(&f)?)?;
        }
        Ok(self.out.forward(&f)?.broadcast_add(&self.offset)?)
    }
}

/// Shared-encoder, two-branch cross-attention decoder regressing both point
/// maps (in the left-camera frame) with per-pixel confidence.
pub struct GeoModel {
    pub config: GeoConfig,
    params: ParamStore,
    patch_embed: Linear,
    positions: Tensor,
    encoder: Vec<EncoderBlock>,
    enc_to_dec: Linear,
    decoder: [Vec<CrossBlock>; 2],
    heads: [PointHead; 2],
}

impl GeoModel {
    pub fn new(config: &GeoConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed, dtype);
        let c = config;
        let patch_embed = Linear::new(&mut ps, "patch_embed", c.patch_dim(), c.encoder_width)?;
        let (gh, gw) = c.grid();
        let positions = Tensor::from_vec(sincos_2d(gh, gw, c.encoder_width)?, (1, gh * gw, c.encoder_width), &Device::Cpu)?
            .to_dtype(dtype)?;
        let encoder = (0..c.encoder_depth)
            .map(|i| EncoderBlock::new(&mut ps, &format!("enc{i}"), c.encoder_width, c.encoder_heads, c.mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        let enc_to_dec = Linear::new(&mut ps, "enc_to_dec", c.encoder_width, c.decoder_width)?;
        let branch = |v: &str, ps: &mut ParamStore| {
            (0..c.decoder_depth)
                .map(|i| CrossBlock::new(ps, &format!("dec_{v}{i}"), c.decoder_width, c.decoder_heads, c.mlp_ratio))
                .collect::<Result<Vec<_>>>()
        };
        let decoder = [branch("left", &mut ps)?, branch("right", &mut ps)?];
        let heads = [PointHead::new(&mut ps, "head_left", c)?, PointHead::new(&mut ps, "head_right", c)?];
        Ok(Self {
            config: c.clone(),
            params: ps,
            patch_embed,
            positions,
            encoder,
            enc_to_dec,
            decoder,
            heads,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Images to `[B, N, 3p²]` patch vectors scaled to `[-1, 1]`; patches are
    /// row-major over the grid, each flattened as (row, col, channel).
    pub fn patchify(&self, images: &[&RgbImage]) -> Result<Tensor> {
        let c = &self.config;
        let p = c.patch_size;
        let (gh, gw) = c.grid();
        let mut data = Vec::with_capacity(images.len() * gh * gw * c.patch_dim());
        for img in images {
            if img.dimensions() != (c.image_width as u32, c.image_height as u32) {
                return Err(Error::Shape(format!(
                    "image {:?} does not match model input {}x{}",
                    img.dimensions(),
                    c.image_width,
                    c.image_height
                )));
            }
            for gr in 0..gh {
                for gc in 0..gw {
                    for r in 0..p {
                        for col in 0..p {
                            let px = img.get_pixel((gc * p + col) as u32, (gr * p + r) as u32);
                            data.extend(px.0.iter().map(|v| *v as f32 / 127.5 - 1.0));
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_vec(data, (images.len(), gh * gw, c.patch_dim()), &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    /// Shared encoder over both views: `[B, N, 3p²]` each → `[B, N, D_enc]` each.
    pub fn encode(&self, left: &Tensor, right: &Tensor) -> Result<[Tensor; 2]> {
        let run = |x: &Tensor| -> Result<Tensor> {
            let (_, n, d) = x.dims3()?;
            if n != self.config.tokens_per_view() || d != self.config.patch_dim() {
                return Err(Error::Shape(format!(
                    "patch tensor [_, {n}, {d}] expected [_, {}, {}]",
                    self.config.tokens_per_view(),
                    self.config.patch_dim()
                )));
            }
            let mut h = self.patch_embed.forward(x)?.broadcast_add(&self.positions)?;
            for block in &self.encoder {
                h = block.forward(&h)?;
            }
            Ok(h)
        };
        Ok([run(left)?, run(right)?])
    }

    /// Two-branch decoder; each block self-attends within its view and
    /// cross-attends to the other view's previous-layer tokens.
    pub fn decode(&self, tokens: &[Tensor; 2]) -> Result<LatentPyramid> {
        let mut x = [self.enc_to_dec.forward(&tokens[0])?, self.enc_to_dec.forward(&tokens[1])?];
        let mut levels = Vec::with_capacity(4);
        for i in 0..self.config.decoder_depth {
            let next = [
                self.decoder[0][i].forward(&x[0], &x[1])?,
                self.decoder[1][i].forward(&x[1], &x[0])?,
            ];
            x = next;
            if self.config.pyramid_taps.contains(&(i + 1)) {
                levels.push(x.clone());
            }
        }
        Ok(LatentPyramid { levels })
    }

    pub fn point_head(&self, pyramid: &LatentPyramid) -> Result<HeadOutput> {
        if pyramid.levels.len() != 4 {
            return Err(Error::Shape(format!("pyramid has {} levels, expected 4", pyramid.levels.len())));
        }
        let mut points = Vec::with_capacity(2);
        let mut logits = Vec::with_capacity(2);
        for v in 0..2 {
            let lv: Vec<&Tensor> = pyramid.levels.iter().map(|l| &l[v]).collect();
            let out = self.heads[v].forward(&lv)?;
            let (b, _, h, w) = out.dims4()?;
            let flat = out.permute((0, 2, 3, 1))?.contiguous()?.reshape((b, h * w, 4))?;
            points.push(flat.narrow(2, 0, 3)?.contiguous()?);
            logits.push(flat.narrow(2, 3, 1)?.squeeze(2)?.contiguous()?);
        }
        let (pr, pl) = (points.pop().unwrap(), points.pop().unwrap());
        let (lr, ll) = (logits.pop().unwrap(), logits.pop().unwrap());
        Ok(HeadOutput {
            points: [pl, pr],
            logits: [ll, lr],
        })
    }

    pub fn forward_patches(&self, left: &Tensor, right: &Tensor) -> Result<(LatentPyramid, HeadOutput)> {
        let pyramid = self.decode(&self.encode(left, right)?)?;
        let out = self.point_head(&pyramid)?;
        Ok((pyramid, out))
    }

    /// Latent pyramid for a batch of stereo pairs, detached from the graph.
    pub fn pyramid(&self, pairs: &[(&RgbImage, &RgbImage)]) -> Result<LatentPyramid> {
        let (l, r) = self.patchify_pairs(pairs)?;
        Ok(self.decode(&self.encode(&l, &r)?)?.detach())
    }

    pub fn patchify_pairs(&self, pairs: &[(&RgbImage, &RgbImage)]) -> Result<(Tensor, Tensor)> {
        let left: Vec<&RgbImage> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<&RgbImage> = pairs.iter().map(|p| p.1).collect();
        Ok((self.patchify(&left)?, self.patchify(&right)?))
    }

    pub fn predict(&self, left: &RgbImage, right: &RgbImage) -> Result<PointPrediction> {
        Ok(self.predict_batch(&[(left, right)])?.pop().unwrap())
    }

    pub fn predict_batch(&self, pairs: &[(&RgbImage, &RgbImage)]) -> Result<Vec<PointPrediction>> {
        let (l, r) = self.patchify_pairs(pairs)?;
        let (_, out) = self.forward_patches(&l, &r)?;
        let n = self.config.image_height * self.config.image_width;
        let mut points = Vec::with_capacity(2);
        let mut conf = Vec::with_capacity(2);
        for v in 0..2 {
            points.push(out.points[v].to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
            conf.push(out.confidence(v)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?);
        }
        Ok((0..pairs.len())
            .map(|b| {
                let view_points = |v: usize| -> Vec<[f32; 3]> {
                    points[v][b * n * 3..(b + 1) * n * 3]
                        .chunks_exact(3)
                        .map(|c| [c[0], c[1], c[2]])
                        .collect()
                };
                PointPrediction {
                    width: self.config.image_width,
                    height: self.config.image_height,
                    points: [view_points(0), view_points(1)],
                    confidence: [
                        conf[0][b * n..(b + 1) * n].to_vec(),
                        conf[1][b * n..(b + 1) * n].to_vec(),
                    ],
                }
            })
            .collect())
    }
}
