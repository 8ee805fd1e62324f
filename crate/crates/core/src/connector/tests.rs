use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn pyramid(b: usize, n: usize, d: usize, seed: u64) -> LatentPyramid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = || {
        let v: Vec<f64> = (0..b * n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, (b, n, d), &Device::Cpu).unwrap()
    };
    LatentPyramid {
        levels: (0..4).map(|_| [t(), t()]).collect(),
    }
}

fn connector(variant: ConnectorVariant, geo: usize, width: usize, grid: (usize, usize), seed: u64) -> Connector {
    connector_with(ConnectorConfig { variant, ..Default::default() }, geo, width, grid, seed)
}

fn connector_with(cfg: ConnectorConfig, geo: usize, width: usize, grid: (usize, usize), seed: u64) -> Connector {
    let mut ps = ParamStore::new(seed, DType::F64);
    let c = Connector::new(&mut ps, &cfg, geo, width, grid).unwrap();
    // Randomize LayerNorm affine parameters and biases so every path is generic.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let snap: Vec<Vec<f64>> = ps
        .snapshot()
        .unwrap()
        .into_iter()
        .map(|v| v.into_iter().map(|x| x + rng.random_range(-0.1..0.1)).collect())
        .collect();
    ps.restore(&snap).unwrap();
    c
}

fn diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
}

#[test]
fn msfc_shape_arithmetic() {
    let cfg = ConnectorConfig {
        variant: ConnectorVariant::Msfc,
        d_low: 48,
        hidden: 0,
    };
    let c = connector_with(cfg, 192, 256, (12, 12), 1);
    let out = c.forward(&pyramid(1, 144, 192, 2)).unwrap();
    assert_eq!(out.sets.len(), 1);
    assert_eq!(out.sets[0].dims(), &[1, 288, 256]);
    if let Body::Msfc { projections, .. } = &c.body {
        assert_eq!(projections.iter().map(|p| p.out_dim()).sum::<usize>(), 192);
    } else {
        unreachable!()
    }
    let default = connector(ConnectorVariant::Msfc, 192, 256, (12, 12), 1);
    if let Body::Msfc { projections, .. } = &default.body {
        assert_eq!(projections[0].out_dim(), 64);
    }
}

#[test]
fn every_msfc_level_is_live_and_order_matters() {
    let c = connector(ConnectorVariant::Msfc, 8, 16, (2, 3), 3);
    let p = pyramid(1, 6, 8, 4);
    let base = c.forward(&p).unwrap().sets[0].clone();
    for l in 0..4 {
        let mut q = p.clone();
        q.levels[l] = [q.levels[l][0].zeros_like().unwrap(), q.levels[l][1].zeros_like().unwrap()];
        assert!(diff(&base, &c.forward(&q).unwrap().sets[0]) > 1e-9, "level {l}");
    }
    let mut swapped = p.clone();
    swapped.levels.swap(0, 2);
    assert!(diff(&base, &c.forward(&swapped).unwrap().sets[0]) > 1e-9);
}

#[test]
fn msfc_has_no_spatial_mixing() {
    let (rows, cols, d) = (2, 2, 4);
    let c = connector(ConnectorVariant::Msfc, d, 8, (rows, cols), 5);
    let p = pyramid(1, rows * cols, d, 6);
    let vars: Vec<[Var; 2]> = p
        .levels
        .iter()
        .map(|[l, r]| [Var::from_tensor(l).unwrap(), Var::from_tensor(r).unwrap()])
        .collect();
    let pv = LatentPyramid {
        levels: vars.iter().map(|[l, r]| [l.as_tensor().clone(), r.as_tensor().clone()]).collect(),
    };
    let out = c.forward(&pv).unwrap().sets[0].clone();
    let n_out = 2 * rows * cols;
    for o in 0..n_out {
        let (row, rest) = (o / (2 * cols), o % (2 * cols));
        let (view, col) = (rest / cols, rest % cols);
        let src = row * cols + col;
        let grads = out.narrow(1, o, 1).unwrap().sum_all().unwrap().backward().unwrap();
        for (lvl, [gl, gr]) in vars.iter().enumerate() {
            for (v, var) in [gl, gr].into_iter().enumerate() {
                let g = grads.get(var).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
                for (tok, row_g) in g.iter().enumerate() {
                    let nz = row_g.iter().any(|x| *x != 0.0);
                    assert_eq!(nz, v == view && tok == src, "out {o} level {lvl} view {v} token {tok}");
                }
            }
        }
    }
}

#[test]
fn lfc_uses_only_the_last_level() {
    let lfc = connector(ConnectorVariant::Lfc, 8, 16, (2, 3), 7);
    let p = pyramid(1, 6, 8, 8);
    let base = lfc.forward(&p).unwrap();
    assert_eq!(base.sets.len(), 1);
    assert_eq!(base.sets[0].dims(), &[1, 12, 16]);
    let mut q = p.clone();
    for l in 0..3 {
        q.levels[l] = [q.levels[l][0].affine(3.0, 1.0).unwrap(), q.levels[l][1].affine(-2.0, 0.5).unwrap()];
    }
    assert_eq!(diff(&base.sets[0], &lfc.forward(&q).unwrap().sets[0]), 0.0);
    let msfc = connector(ConnectorVariant::Msfc, 8, 16, (2, 3), 7);
    assert!(diff(&base.sets[0], &msfc.forward(&p).unwrap().sets[0]) > 1e-9);
}

#[test]
fn msc_emits_per_level_sets_with_fixed_routing() {
    let c = connector(ConnectorVariant::Msc, 192, 256, (12, 12), 9);
    let out = c.forward(&pyramid(1, 144, 192, 10)).unwrap();
    assert_eq!(out.sets.len(), 4);
    for s in &out.sets {
        assert_eq!(s.dims(), &[1, 288, 256]);
    }
    let routes: Vec<usize> = (0..8).map(msc_level_for_block).collect();
    assert_eq!(routes, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    for b in 0..8 {
        assert_eq!(diff(out.for_block(b), &out.sets[b % 4]), 0.0);
    }
}

#[test]
fn stereo_concatenation_layout() {
    let l = Tensor::arange(0f64, 6.0, &Device::Cpu).unwrap().reshape((1, 6, 1)).unwrap();
    let r = (l.clone() + 100.0).unwrap();
    let s = concat_stereo(&l, &r, 2, 3).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    assert_eq!(s, vec![0., 1., 2., 100., 101., 102., 3., 4., 5., 103., 104., 105.]);
}

#[test]
fn wrong_level_count_rejected() {
    let c = connector(ConnectorVariant::Msfc, 8, 16, (2, 3), 11);
    let mut p = pyramid(1, 6, 8, 12);
    p.levels.pop();
    assert!(c.forward(&p).is_err());
}
