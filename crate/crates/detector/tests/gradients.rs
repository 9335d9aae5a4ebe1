//! Finite-difference checks of every loss gradient and of both networks.

use bevclick_core::geometry::Cuboid;
use bevclick_detector::codec::BoxCodec;
use bevclick_detector::config::{LossConfig, Stage1Config, Stage2Config};
use bevclick_detector::crop::FeatureBlock;
use bevclick_detector::losses::{bin_loss, box_loss, confidence_loss, seg_loss, BoxTarget};
use bevclick_detector::stage1::Stage1Net;
use bevclick_detector::stage2::Stage2Net;
use bevclick_nn::gradcheck::{check_params, relative_error};
use bevclick_nn::{LayerSpec, ParamSet, PointSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

/// Largest relative error between `grad` and central differences of `f`.
fn fd_check(x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut v = x.to_vec();
    for i in 0..x.len() {
        v[i] = x[i] + H;
        let plus = f(&v);
        v[i] = x[i] - H;
        let minus = f(&v);
        v[i] = x[i];
        worst = worst.max(relative_error(grad[i], (plus - minus) / (2.0 * H), FLOOR));
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[test]
fn seg_loss_gradient() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let pred = uniform(&mut rng, 16, 0.02, 0.98);
        let target = uniform(&mut rng, 16, 0.0, 1.0);
        let (_, g) = seg_loss(&pred, &target, &cfg);
        let err = fd_check(&pred, &g, |p| seg_loss(p, &target, &cfg).0);
        assert!(err < TOL, "seg_loss rel err {err}");
    }
}

#[test]
fn bin_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let pred = uniform(&mut rng, 40, -3.0, 3.0);
        // Keep residual errors away from the smooth-L1 kink at ±1.
        let targets: Vec<(usize, f64)> = (0..2)
            .map(|a| {
                let bin = rng.random_range(0..10);
                let off: f64 = rng.random_range(0.1..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (bin, pred[a * 20 + 10 + bin] - off)
            })
            .collect();
        let (_, g) = bin_loss(&pred, &targets, 10, 1.0);
        let err = fd_check(&pred, &g, |p| bin_loss(p, &targets, 10, 1.0).0);
        assert!(err < TOL, "bin_loss rel err {err}");
    }
}

#[test]
fn box_loss_gradient() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let pred = uniform(&mut rng, 30, -2.0, 2.0);
        let mut reg = [0.0; 6];
        for (k, r) in reg.iter_mut().enumerate() {
            let off: f64 = rng.random_range(0.1..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            // Some parameters beyond the transition, some inside.
            *r = pred[24 + k] - if k % 2 == 0 { off } else { 2.0 * off.signum() + off };
        }
        let theta_bin = rng.random_range(0..12);
        let target = BoxTarget {
            theta_bin,
            theta_res: pred[12 + theta_bin] - 0.3,
            reg,
        };
        let (_, g) = box_loss(&pred, &target, &cfg);
        let err = fd_check(&pred, &g, |p| box_loss(p, &target, &cfg).0);
        assert!(err < TOL, "box_loss rel err {err}");
    }
}

#[test]
fn confidence_loss_gradient() {
    let cfg = LossConfig::default();
    let gt = Cuboid::new(0.0, 0.8, 10.0, 1.5, 1.6, 3.9, 0.2).unwrap();
    let pred_box = Cuboid::new(0.4, 0.8, 10.3, 1.5, 1.7, 3.6, 0.3).unwrap();
    for c in [0.05, 0.3, 0.6, 0.95] {
        for gts in [vec![gt], vec![]] {
            let (_, d) = confidence_loss(c, &pred_box, &gts, &cfg);
            let err = fd_check(&[c], &[d], |p| confidence_loss(p[0], &pred_box, &gts, &cfg).0);
            assert!(err < TOL, "confidence_loss rel err {err}");
        }
    }
}

fn jitter(ps: &mut ParamSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &mut ps.tensors {
        t.values.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(rows, cols, uniform(rng, rows * cols, -1.0, 1.0))
}

#[test]
fn stage1_network_gradient() {
    let cfg = Stage1Config {
        num_points: 24,
        in_features: 2,
        sa: vec![
            LayerSpec::sa(8, &[0.5, 1.0], &[4, 6], &[&[4, 4], &[4]]),
            LayerSpec::sa(3, &[1.5], &[4], &[&[6]]),
        ],
        fp: vec![vec![5], vec![4, 4]],
        head_hidden: 4,
        bins: Default::default(),
    };
    let mut ps = ParamSet::new(5);
    let net = Stage1Net::new(&mut ps, &cfg).unwrap();
    jitter(&mut ps, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let coords: Vec<[f64; 3]> = (0..24).map(|_| [rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5), rng.random_range(-1.5..1.5)]).collect();
    let feats = random_tensor(24, 2, &mut rng);
    let points = PointSet::single(coords);
    let w_fg = random_tensor(24, 1, &mut rng);
    let w_center = random_tensor(24, cfg.center_outputs(), &mut rng);
    // One weight tensor over the concatenated outputs.
    let mut w = Tensor::zeros(24, 1 + cfg.center_outputs());
    for i in 0..24 {
        w.row_mut(i)[0] = w_fg.get(i, 0);
        w.row_mut(i)[1..].copy_from_slice(w_center.row(i));
    }
    let r = check_params(&mut ps, &w, 1e-5, FLOOR, |g| {
        let f = g.input(feats.clone());
        let (fg, center) = net.forward(g, &points, f).map_err(|e| bevclick_nn::NnError::Shape(e.to_string()))?;
        g.concat(&[fg, center])
    })
    .unwrap();
    assert!(r.checked > 0 && r.max_rel_err < TOL, "{r:?}");
}

#[test]
fn stage2_network_gradient() {
    let cfg = Stage2Config {
        num_points: 12,
        in_features: 5,
        sa: vec![LayerSpec::sa(4, &[1.0], &[4], &[&[4, 6]]), LayerSpec::sa_global(&[8])],
        head_hidden: 5,
        crop_margin: 0.3,
    };
    let codec = BoxCodec::new(&LossConfig::default(), [1.53, 1.63, 3.88]);
    let mut ps = ParamSet::new(8);
    let net = Stage2Net::new(&mut ps, "s2", &cfg, codec.outputs()).unwrap();
    jitter(&mut ps, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let blocks: Vec<FeatureBlock> = (0..2)
        .map(|_| {
            FeatureBlock::from_rows(
                (0..12)
                    .map(|_| {
                        let mut r = [0.0; 5];
                        r.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                        r
                    })
                    .collect(),
            )
        })
        .collect();
    let refs: Vec<&FeatureBlock> = blocks.iter().collect();
    let w = random_tensor(2, codec.outputs() + 1, &mut rng);
    let r = check_params(&mut ps, &w, 1e-5, FLOOR, |g| {
        let (b, c) = net.forward(g, &refs).map_err(|e| bevclick_nn::NnError::Shape(e.to_string()))?;
        g.concat(&[b, c])
    })
    .unwrap();
    assert!(r.checked > 0 && r.max_rel_err < TOL, "{r:?}");
}
