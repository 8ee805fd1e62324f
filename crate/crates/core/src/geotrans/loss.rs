use candle_core::{DType, Device, Tensor, D};

use super::model::{HeadOutput, PointPrediction};
use crate::error::{Error, Result};
use crate::geom::PointMap;
use crate::nn::safe_norm;
use crate::scenegen::Sample;

/// Mean Euclidean norm of the valid points pooled over all given maps.
pub fn normalize_scale(maps: &[&PointMap]) -> Result<f64> {
    let (sum, n) = maps.iter().fold((0.0, 0usize), |(s, n), m| {
        let (ms, mn) = (0..m.len())
            .filter(|i| m.valid[*i])
            .fold((0.0, 0), |(s, n), i| (s + m.point(i).norm(), n + 1));
        (s + ms, n + mn)
    });
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Regression loss with the per-pixel map (zero on invalid pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct RegLoss {
    pub sum: f64,
    pub mean: f64,
    pub per_pixel: [Vec<f64>; 2],
}

fn masked_prediction(pred: &PointPrediction, gt: [&PointMap; 2]) -> Result<[PointMap; 2]> {
    let mut out = [PointMap::new(pred.width, pred.height), PointMap::new(pred.width, pred.height)];
    for v in 0..2 {
        if gt[v].len() != pred.points[v].len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.points[v].len(),
                gt[v].len()
            )));
        }
        out[v].points.clone_from(&pred.points[v]);
        out[v].valid.clone_from(&gt[v].valid);
    }
    Ok(out)
}

/// `‖X/z − X̂/ẑ‖` per valid pixel, with prediction and ground truth each
/// normalized by their own pooled scale over the ground-truth mask.
pub fn loss_reg(pred: &PointPrediction, gt: [&PointMap; 2]) -> Result<RegLoss> {
    let p = masked_prediction(pred, gt)?;
    let z = normalize_scale(&[&p[0], &p[1]])?;
    let zh = normalize_scale(&gt)?;
    let mut per_pixel = [vec![0.0; gt[0].len()], vec![0.0; gt[1].len()]];
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in 0..2 {
        for i in 0..gt[v].len() {
            if gt[v].valid[i] {
                let l = (p[v].point(i) / z - gt[v].point(i) / zh).norm();
                per_pixel[v][i] = l;
                sum += l;
                n += 1;
            }
        }
    }
    Ok(RegLoss {
        sum,
        mean: sum / n as f64,
        per_pixel,
    })
}

/// `Σ_v Σ_i C·L_reg − α·log C` over valid pixels.
pub fn loss_conf(pred: &PointPrediction, gt: [&PointMap; 2], alpha: f64) -> Result<f64> {
    let reg = loss_reg(pred, gt)?;
    let mut total = 0.0;
    for v in 0..2 {
        for i in 0..gt[v].len() {
            if gt[v].valid[i] {
                let c = pred.confidence[v][i] as f64;
                total += c * reg.per_pixel[v][i] - alpha * c.ln();
            }
        }
    }
    Ok(total)
}

/// Batched ground truth: `points[v]` `[B, N, 3]`, `mask[v]` `[B, N]` (0/1).
#[derive(Debug, Clone)]
pub struct Targets {
    pub points: [Tensor; 2],
    pub mask: [Tensor; 2],
    pub valid_counts: Vec<usize>,
}

impl Targets {
    pub fn from_maps(maps: &[[&PointMap; 2]], dtype: DType) -> Result<Self> {
        let b = maps.len();
        let n = maps.first().map(|m| m[0].len()).ok_or(Error::EmptyMask)?;
        let mut valid_counts = vec![0; b];
        let mut build = |v: usize| -> Result<(Tensor, Tensor)> {
            let mut pts = Vec::with_capacity(b * n * 3);
            let mut mask = Vec::with_capacity(b * n);
            for (k, m) in maps.iter().enumerate() {
                let map = m[v];
                if map.len() != n {
                    return Err(Error::Shape("ground-truth maps differ in size".into()));
                }
                valid_counts[k] += map.valid_count();
                for i in 0..n {
                    pts.extend_from_slice(&map.points[i]);
                    mask.push(if map.valid[i] { 1.0f32 } else { 0.0 });
                }
            }
            Ok((
                Tensor::from_vec(pts, (b, n, 3), &Device::Cpu)?.to_dtype(dtype)?,
                Tensor::from_vec(mask, (b, n), &Device::Cpu)?.to_dtype(dtype)?,
            ))
        };
        let (p0, m0) = build(0)?;
        let (p1, m1) = build(1)?;
        if valid_counts.iter().any(|c| *c == 0) {
            return Err(Error::EmptyMask);
        }
        Ok(Self {
            points: [p0, p1],
            mask: [m0, m1],
            valid_counts,
        })
    }

    pub fn from_samples(samples: &[&Sample], dtype: DType) -> Result<Self> {
        let maps: Vec<[&PointMap; 2]> = samples.iter().map(|s| [&s.pointmap_left, &s.pointmap_right]).collect();
        Self::from_maps(&maps, dtype)
    }

    pub fn total_valid(&self) -> usize {
        self.valid_counts.iter().sum()
    }
}

/// Differentiable loss terms for a batch.
pub struct LossTerms {
    /// Confidence-weighted objective averaged over valid pixels (the training loss).
    pub objective: Tensor,
    pub loss_conf_sum: Tensor,
    pub loss_reg_sum: Tensor,
    pub loss_reg_mean: Tensor,
    pub per_pixel: [Tensor; 2],
}

/// Per-sample pooled scale `[B, 1, 1]`; `norms[v]` are `[B, N]`.
fn pooled_scale(norms: [&Tensor; 2], mask: &[Tensor; 2]) -> Result<Tensor> {
    let num = ((norms[0] * &mask[0])?.sum(1)? + (norms[1] * &mask[1])?.sum(1)?)?;
    let den = (mask[0].sum(1)? + mask[1].sum(1)?)?;
    Ok((num / den)?.unsqueeze(1)?.unsqueeze(2)?)
}

pub fn batch_losses(out: &HeadOutput, targets: &Targets, alpha: f64) -> Result<LossTerms> {
    let pred_norms = [safe_norm(&out.points[0])?, safe_norm(&out.points[1])?];
    let z = pooled_scale([&pred_norms[0], &pred_norms[1]], &targets.mask)?;
    let gt_norms = [targets.points[0].sqr()?.sum(D::Minus1)?.sqrt()?, targets.points[1].sqr()?.sum(D::Minus1)?.sqrt()?];
    let zh = pooled_scale([&gt_norms[0], &gt_norms[1]], &targets.mask)?;
    let mut per_pixel = Vec::with_capacity(2);
    let mut conf_terms = Vec::with_capacity(2);
    for v in 0..2 {
        let diff = (out.points[v].broadcast_div(&z)? - targets.points[v].broadcast_div(&zh)?)?;
        let l = (safe_norm(&diff)? * &targets.mask[v])?;
        let c = out.confidence(v)?;
        let log_c = out.log_confidence(v)?;
        let term = (((c * &l)? - (log_c * alpha)?)? * &targets.mask[v])?;
        conf_terms.push(term.sum_all()?);
        per_pixel.push(l);
    }
    let loss_reg_sum = (per_pixel[0].sum_all()? + per_pixel[1].sum_all()?)?;
    let loss_conf_sum = (&conf_terms[0] + &conf_terms[1])?;
    let n = targets.total_valid() as f64;
    let pr = per_pixel.pop().unwrap();
    let pl = per_pixel.pop().unwrap();
    Ok(LossTerms {
        objective: (&loss_conf_sum / n)?,
        loss_reg_mean: (&loss_reg_sum / n)?,
        loss_conf_sum,
        loss_reg_sum,
        per_pixel: [pl, pr],
    })
}

/// Median over valid pixels of `‖s·X − X̂‖`, with one least-squares scale `s`
/// per sample fitted over both views.
pub fn scale_aligned_errors(pred: &PointPrediction, gt: [&PointMap; 2]) -> Vec<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for v in 0..2 {
        for i in 0..gt[v].len() {
            if gt[v].valid[i] {
                let p = pred_point(pred, v, i);
                num += p.dot(&gt[v].point(i));
                den += p.norm_squared();
            }
        }
    }
    let s = if den > 0.0 { num / den } else { 0.0 };
    let mut errs = Vec::new();
    for v in 0..2 {
        for i in 0..gt[v].len() {
            if gt[v].valid[i] {
                errs.push((pred_point(pred, v, i) * s - gt[v].point(i)).norm());
            }
        }
    }
    errs
}

fn pred_point(pred: &PointPrediction, v: usize, i: usize) -> nalgebra::Vector3<f64> {
    let p = pred.points[v][i];
    nalgebra::Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
