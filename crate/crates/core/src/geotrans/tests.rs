use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::PointMap;
use crate::scenegen::{render_stereo, sample_scene, RandomizationConfig, Range, Sample};

pub(crate) fn tiny_config() -> GeoConfig {
    GeoConfig {
        image_height: 8,
        image_width: 8,
        patch_size: 4,
        encoder_depth: 1,
        encoder_width: 4,
        encoder_heads: 1,
        decoder_depth: 4,
        decoder_width: 4,
        decoder_heads: 1,
        mlp_ratio: 1,
        pyramid_taps: [1, 2, 3, 4],
        head_channels: 2,
        alpha: 0.2,
    }
}

fn small_config() -> GeoConfig {
    GeoConfig {
        encoder_depth: 1,
        encoder_width: 16,
        encoder_heads: 2,
        decoder_depth: 4,
        decoder_width: 16,
        decoder_heads: 2,
        mlp_ratio: 2,
        pyramid_taps: [1, 2, 3, 4],
        head_channels: 4,
        ..GeoConfig::default()
    }
}

pub(crate) fn scene_samples(width: u32, focal: f64, count: u64, seed: u64) -> Vec<Sample> {
    let cfg = RandomizationConfig {
        width,
        height: width,
        focal_px: Range::new(focal, focal * 1.2),
        principal_jitter_px: 0.5,
        master_seed: seed,
        ..Default::default()
    };
    (0..count)
        .map(|i| {
            let (scene, rig) = sample_scene(&cfg, i).unwrap();
            render_stereo(&scene, &rig, seed, i)
        })
        .collect()
}

fn random_patches(model: &GeoModel, b: usize, seed: u64) -> Tensor {
    let n = model.config.tokens_per_view();
    let d = model.config.patch_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..b * n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(data, (b, n, d), &Device::Cpu).unwrap().to_dtype(model.dtype()).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn miniature_model_is_small() {
    let m = GeoModel::new(&tiny_config(), 0, DType::F64).unwrap();
    assert!(m.params().num_params() <= 5000, "{} params", m.params().num_params());
}

#[test]
fn encoder_shares_weights_across_views() {
    let m = GeoModel::new(&small_config(), 1, DType::F32).unwrap();
    let a = random_patches(&m, 1, 2);
    let b = random_patches(&m, 1, 3);
    let [ta, tb] = m.encode(&a, &a).unwrap();
    assert_eq!(max_abs_diff(&ta, &tb), 0.0);
    assert_eq!(ta.dims(), &[1, 144, 16]);
    let [x, y] = m.encode(&a, &b).unwrap();
    let [y2, x2] = m.encode(&b, &a).unwrap();
    assert_eq!(max_abs_diff(&x, &x2), 0.0);
    assert_eq!(max_abs_diff(&y, &y2), 0.0);
}

#[test]
fn pyramid_has_four_levels_and_cross_attention_is_live() {
    let m = GeoModel::new(&small_config(), 1, DType::F32).unwrap();
    let a = random_patches(&m, 1, 4);
    let b = random_patches(&m, 1, 5);
    let tokens = m.encode(&a, &b).unwrap();
    let pyr = m.decode(&tokens).unwrap();
    assert_eq!(pyr.levels.len(), 4);
    for level in &pyr.levels {
        assert_eq!(level[0].dims(), &[1, 144, 16]);
        assert_eq!(level[1].dims(), &[1, 144, 16]);
    }
    let zeroed = [tokens[0].clone(), tokens[1].zeros_like().unwrap()];
    let pyr0 = m.decode(&zeroed).unwrap();
    assert!(max_abs_diff(&pyr.levels[3][0], &pyr0.levels[3][0]) > 1e-6);
}

#[test]
fn output_depends_on_both_views() {
    let m = GeoModel::new(&tiny_config(), 2, DType::F64).unwrap();
    let a = Var::from_tensor(&random_patches(&m, 1, 6)).unwrap();
    let b = Var::from_tensor(&random_patches(&m, 1, 7)).unwrap();
    let (_, out) = m.forward_patches(a.as_tensor(), b.as_tensor()).unwrap();
    let grads = out.points[0].sum_all().unwrap().backward().unwrap();
    for v in [&a, &b] {
        let g = grads.get(v).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(g > 0.0);
    }
}

#[test]
fn head_shapes_and_confidence_parameterization() {
    let m = GeoModel::new(&small_config(), 3, DType::F32).unwrap();
    let (_, out) = m.forward_patches(&random_patches(&m, 2, 8), &random_patches(&m, 2, 9)).unwrap();
    for v in 0..2 {
        assert_eq!(out.points[v].dims(), &[2, 96 * 96, 3]);
        assert_eq!(out.logits[v].dims(), &[2, 96 * 96]);
        let c = out.confidence(v).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(c.iter().all(|c| *c >= 1.0 && c.is_finite()));
    }
    let zeros = Tensor::zeros((1, 4), DType::F64, &Device::Cpu).unwrap();
    let floor = Tensor::new(&[[-800.0f64]], &Device::Cpu).unwrap();
    let h = HeadOutput {
        points: [zeros.clone(), zeros.clone()],
        logits: [zeros.clone(), floor],
    };
    assert_eq!(h.confidence(0).unwrap().to_vec2::<f64>().unwrap(), vec![vec![2.0; 4]]);
    assert_eq!(h.confidence(1).unwrap().to_vec2::<f64>().unwrap(), vec![vec![1.0]]);
    assert_eq!(h.log_confidence(1).unwrap().to_vec2::<f64>().unwrap(), vec![vec![0.0]]);
}

fn map_from(points: &[[f32; 3]], valid: &[bool], width: usize) -> PointMap {
    PointMap {
        width,
        height: points.len() / width,
        points: points.to_vec(),
        valid: valid.to_vec(),
    }
}

fn prediction(maps: [&PointMap; 2], conf: f32) -> PointPrediction {
    PointPrediction {
        width: maps[0].width,
        height: maps[0].height,
        points: [maps[0].points.clone(), maps[1].points.clone()],
        confidence: [vec![conf; maps[0].len()], vec![conf; maps[1].len()]],
    }
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> PointMap {
    let mut m = PointMap::new(w, h);
    for i in 0..m.len() {
        m.points[i] = [rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(0.05..0.1)];
        m.valid[i] = rng.random_bool(0.8);
    }
    m.valid[0] = true;
    m
}

#[test]
fn normalize_scale_examples() {
    let two = map_from(&[[0.0, 0.0, 2.0], [2.0, 0.0, 0.0]], &[true, true], 2);
    assert_eq!(normalize_scale(&[&two]).unwrap(), 2.0);
    let a = map_from(&[[0.0, 0.0, 1.0], [0.0, 0.0, 3.0]], &[true, true], 2);
    assert_eq!(normalize_scale(&[&a]).unwrap(), 2.0);
    let pooled = map_from(&[[0.0, 0.0, 3.0], [0.0, 0.0, 99.0]], &[true, false], 2);
    let one = map_from(&[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]], &[true, false], 2);
    assert_eq!(normalize_scale(&[&pooled, &one]).unwrap(), 2.0);
    let s = normalize_scale(&[&a.scaled(7.0)]).unwrap();
    assert!((s - 14.0).abs() < 1e-6);
    let none = PointMap::new(2, 1);
    assert!(normalize_scale(&[&none]).is_err());
}

#[test]
fn toy_normalization_oracle() {
    let pred = map_from(&[[0.0, 0.0, 1.0], [0.0, 0.0, 3.0]], &[true, true], 2);
    let gt = map_from(&[[0.0, 0.0, 2.0], [0.0, 0.0, 6.0]], &[true, true], 2);
    let p = prediction([&pred, &pred], 1.0);
    let loss = loss_reg(&p, [&gt, &gt]).unwrap();
    assert_eq!(loss.sum, 0.0);
    assert_eq!(loss.mean, 0.0);
}

#[test]
fn loss_reg_scale_invariance_and_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let gt = [random_map(&mut rng, 6, 5), random_map(&mut rng, 6, 5)];
    let pm = [random_map(&mut rng, 6, 5), random_map(&mut rng, 6, 5)];
    let pred = prediction([&pm[0], &pm[1]], 1.0);
    let base = loss_reg(&pred, [&gt[0], &gt[1]]).unwrap();
    assert!(base.sum > 0.0);
    for s in [0.1f32, 1.0, 10.0] {
        let gs = [gt[0].scaled(s), gt[1].scaled(s)];
        let l = loss_reg(&pred, [&gs[0], &gs[1]]).unwrap();
        assert!((l.sum - base.sum).abs() <= 1e-6 * base.sum);
        let ps = [pm[0].scaled(s), pm[1].scaled(s)];
        let l = loss_reg(&prediction([&ps[0], &ps[1]], 1.0), [&gt[0], &gt[1]]).unwrap();
        assert!((l.sum - base.sum).abs() <= 1e-6 * base.sum);
    }
    let same = prediction([&gt[0], &gt[1]], 1.0);
    assert_eq!(loss_reg(&same, [&gt[0], &gt[1]]).unwrap().sum, 0.0);
    assert_eq!(loss_conf(&pred, [&gt[0], &gt[1]], 0.2).unwrap(), base.sum);
}

#[test]
fn scalar_confidence_optimum() {
    let alpha = 0.2;
    for l in [0.01, 0.05, 0.13] {
        let f = |c: f64| c * l - alpha * c.ln();
        // Golden-section search over C > 0.
        let (mut a, mut b) = (1e-6, 1e3);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c1 = b - g * (b - a);
            let c2 = a + g * (b - a);
            if f(c1) < f(c2) {
                b = c2;
            } else {
                a = c1;
            }
        }
        let numeric = 0.5 * (a + b);
        let closed = alpha / l;
        assert!((numeric - closed).abs() / closed < 1e-4, "{numeric} vs {closed}");
    }
    // With C = 1 + exp(s) and L > α, descent on s drives C to its floor.
    let l = 0.5;
    let mut s = 2.0f64;
    for _ in 0..20_000 {
        let e = s.exp();
        let dc = e;
        let grad = l * dc - alpha * dc / (1.0 + e);
        s -= 0.5 * grad;
    }
    assert!(1.0 + s.exp() < 1.0 + 1e-3, "C = {}", 1.0 + s.exp());
}

#[test]
fn tensor_losses_match_host_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gt = [random_map(&mut rng, 4, 3), random_map(&mut rng, 4, 3)];
    let pm = [random_map(&mut rng, 4, 3), random_map(&mut rng, 4, 3)];
    let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-2.0..2.0)).collect();
    let to_t = |m: &PointMap| {
        let flat: Vec<f64> = m.points.iter().flat_map(|p| p.iter().map(|v| *v as f64)).collect();
        Tensor::from_vec(flat, (1, 12, 3), &Device::Cpu).unwrap()
    };
    let head = HeadOutput {
        points: [to_t(&pm[0]), to_t(&pm[1])],
        logits: [
            Tensor::from_vec(logits[..12].to_vec(), (1, 12), &Device::Cpu).unwrap(),
            Tensor::from_vec(logits[12..].to_vec(), (1, 12), &Device::Cpu).unwrap(),
        ],
    };
    let targets = Targets::from_maps(&[[&gt[0], &gt[1]]], DType::F64).unwrap();
    let terms = batch_losses(&head, &targets, 0.2).unwrap();
    let mut pred = prediction([&pm[0], &pm[1]], 1.0);
    for v in 0..2 {
        pred.confidence[v] = logits[v * 12..(v + 1) * 12].iter().map(|s| (1.0 + s.exp()) as f32).collect();
    }
    let host = loss_reg(&pred, [&gt[0], &gt[1]]).unwrap();
    let t_reg = terms.loss_reg_sum.to_scalar::<f64>().unwrap();
    assert!((t_reg - host.sum).abs() < 1e-9 * host.sum.max(1.0));
    let host_conf = loss_conf(&pred, [&gt[0], &gt[1]], 0.2).unwrap();
    let t_conf = terms.loss_conf_sum.to_scalar::<f64>().unwrap();
    assert!((t_conf - host_conf).abs() < 1e-5 * host_conf.abs().max(1.0), "{t_conf} vs {host_conf}");
    let n = targets.total_valid() as f64;
    assert!((terms.objective.to_scalar::<f64>().unwrap() - t_conf / n).abs() < 1e-12);
}

#[test]
fn masked_pixels_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let gt = [random_map(&mut rng, 4, 3), random_map(&mut rng, 4, 3)];
    let vars: Vec<Var> = (0..2)
        .map(|_| {
            let d: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
            Var::from_tensor(&Tensor::from_vec(d, (1, 12, 3), &Device::Cpu).unwrap()).unwrap()
        })
        .collect();
    let logit_vars: Vec<Var> = (0..2)
        .map(|_| {
            let d: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            Var::from_tensor(&Tensor::from_vec(d, (1, 12), &Device::Cpu).unwrap()).unwrap()
        })
        .collect();
    let head = HeadOutput {
        points: [vars[0].as_tensor().clone(), vars[1].as_tensor().clone()],
        logits: [logit_vars[0].as_tensor().clone(), logit_vars[1].as_tensor().clone()],
    };
    let targets = Targets::from_maps(&[[&gt[0], &gt[1]]], DType::F64).unwrap();
    let grads = batch_losses(&head, &targets, 0.2).unwrap().objective.backward().unwrap();
    let mut checked = 0;
    for v in 0..2 {
        let gp = grads.get(&vars[v]).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let gl = grads.get(&logit_vars[v]).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for i in 0..12 {
            if !gt[v].valid[i] {
                assert_eq!(&gp[3 * i..3 * i + 3], &[0.0, 0.0, 0.0]);
                assert_eq!(gl[i], 0.0);
                checked += 1;
            } else {
                assert!(gp[3 * i..3 * i + 3].iter().any(|g| *g != 0.0));
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let cfg = tiny_config();
    let model = GeoModel::new(&cfg, 21, DType::F64).unwrap();
    // Perturb every parameter so biases and norms are away from their init.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let snap: Vec<Vec<f64>> = model
        .params()
        .snapshot()
        .unwrap()
        .into_iter()
        .map(|v| v.into_iter().map(|x| x + rng.random_range(-0.3..0.3)).collect())
        .collect();
    model.params().restore(&snap).unwrap();
    let a = random_patches(&model, 1, 23);
    let b = random_patches(&model, 1, 24);
    let mut gt = [random_map(&mut rng, 8, 8), random_map(&mut rng, 8, 8)];
    for m in &mut gt {
        m.valid[5] = false;
    }
    let targets = Targets::from_maps(&[[&gt[0], &gt[1]]], DType::F64).unwrap();
    let loss = || -> f64 {
        let (_, out) = model.forward_patches(&a, &b).unwrap();
        batch_losses(&out, &targets, cfg.alpha).unwrap().objective.to_scalar::<f64>().unwrap()
    };
    let (_, out) = model.forward_patches(&a, &b).unwrap();
    let grads = batch_losses(&out, &targets, cfg.alpha).unwrap().objective.backward().unwrap();
    let vars = model.params().vars();
    let sizes: Vec<usize> = vars.iter().map(|v| v.elem_count()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut k = rng.random_range(0..total);
        let mut vi = 0;
        while k >= sizes[vi] {
            k -= sizes[vi];
            vi += 1;
        }
        let analytic = grads.get(&vars[vi]).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[k];
        let mut p = snap.clone();
        p[vi][k] = snap[vi][k] + h;
        model.params().restore(&p).unwrap();
        let fp = loss();
        p[vi][k] = snap[vi][k] - h;
        model.params().restore(&p).unwrap();
        let fm = loss();
        model.params().restore(&snap).unwrap();
        let numeric = (fp - fm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "param {} [{k}]: analytic {analytic} numeric {numeric}", model.params().named()[vi].0);
    }
    assert!(worst < 1e-4);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let samples = scene_samples(8, 8.0, 1, 3);
    let m = GeoModel::new(&tiny_config(), 4, DType::F32).unwrap();
    let path = dir.path().join("geo.ckpt");
    let fp = m.save(&path, 4, 0, None).unwrap();
    let (back, meta, fp2) = GeoModel::load(&path, DType::F32).unwrap();
    assert_eq!(fp, fp2);
    assert_eq!(meta.config, tiny_config());
    assert_eq!(back.params().digest().unwrap(), m.params().digest().unwrap());
    let s = &samples[0];
    assert_eq!(m.predict(&s.left, &s.right).unwrap(), back.predict(&s.left, &s.right).unwrap());
}

#[test]
fn training_is_deterministic_and_divergence_aborts() {
    let samples = scene_samples(8, 8.0, 3, 5);
    let cfg = GeoTrainConfig {
        epochs: 2,
        batch_size: 2,
        lr: 1e-3,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let m = GeoModel::new(&tiny_config(), 1, DType::F32).unwrap();
        let mut buf = Vec::new();
        let out = train_geo(&m, &GeoData::Memory(&samples), &cfg, Some(&mut buf), None).unwrap();
        (out.metrics, buf)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a.len(), 4);
    assert_eq!(la, lb);
    assert_eq!(a, b);
    let text = String::from_utf8(la).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["step"], 0);
    assert!(first["loss_conf"].is_f64() && first["loss_reg_mean"].is_f64());

    let mut bad = samples.clone();
    let i = bad[0].pointmap_left.valid.iter().position(|v| *v).unwrap();
    bad[0].pointmap_left.points[i] = [f32::NAN, 0.0, 0.0];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ckpt");
    let m = GeoModel::new(&tiny_config(), 1, DType::F32).unwrap();
    let before = m.params().digest().unwrap();
    let one = GeoTrainConfig {
        batch_size: 3,
        ..cfg.clone()
    };
    let err = train_geo(&m, &GeoData::Memory(&bad), &one, None, Some(&path)).err().unwrap();
    assert!(matches!(err, crate::Error::Diverged { step: 0 }));
    let (reloaded, _, _) = GeoModel::load(&path, DType::F32).unwrap();
    assert_eq!(reloaded.params().digest().unwrap(), before);
}

#[test]
fn ply_export_parses_with_independent_reader() {
    use ply_rs::parser::Parser;
    use ply_rs::ply::DefaultElement;
    let samples = scene_samples(8, 8.0, 1, 6);
    let m = GeoModel::new(&tiny_config(), 7, DType::F32).unwrap();
    let mut pred = m.predict(&samples[0].left, &samples[0].right).unwrap();
    for i in 0..10 {
        pred.confidence[0][i] = 1.0;
    }
    for i in 10..64 {
        pred.confidence[0][i] = 3.0;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cloud.ply");
    let n = export_pointcloud(&pred, 0, &samples[0].left, 2.0, &path).unwrap();
    assert_eq!(n, 54);
    let mut f = std::fs::File::open(&path).unwrap();
    let ply = Parser::<DefaultElement>::new().read_ply(&mut f).unwrap();
    assert_eq!(ply.header.elements["vertex"].count, 54);
    assert_eq!(ply.payload["vertex"].len(), 54);
}
