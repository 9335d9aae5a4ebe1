//! Training losses with analytic gradients.
//!
//! Every loss takes raw network outputs and returns `(value, d value / d
//! outputs)`. The gradients seed [`bevclick_nn::Graph::backward`].

use bevclick_core::geometry::{iou_3d, Cuboid};

use crate::config::LossConfig;

const LOG_FLOOR: f64 = 1e-12;

/// Smooth-L1 with transition `beta`: `0.5 x² / beta` inside, `|x| - 0.5 beta`
/// outside. Returns the value and its derivative.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

/// Soft focal loss, averaged over points. `pred` holds the predicted
/// foreground probabilities and `target` the pseudo foreground values.
/// The gradient is with respect to `pred`.
pub fn seg_loss(pred: &[f64], target: &[f64], cfg: &LossConfig) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len(), "seg_loss: length mismatch");
    if pred.is_empty() {
        return (0.0, Vec::new());
    }
    let n = pred.len() as f64;
    let (a, gamma) = (cfg.alpha, cfg.gamma);
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &f)| {
            let fh = p * f + (1.0 - p) * (1.0 - f);
            let q = 1.0 - fh;
            let (log, dlog) = if fh > LOG_FLOOR { (fh.ln(), 1.0 / fh) } else { (LOG_FLOOR.ln(), 0.0) };
            let qg = q.powf(gamma);
            total += -a * qg * log;
            let dq = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            let dfh = a * dq * log - a * qg * dlog;
            dfh * (2.0 * f - 1.0) / n
        })
        .collect();
    (total / n, grad)
}

/// Bin classification plus residual regression.
///
/// `pred` holds one `[logits; num_bins]` followed by `[residuals; num_bins]`
/// block per axis; `targets` one `(bin, residual)` pair per axis. The
/// residual is regressed only for the target bin.
pub fn bin_loss(pred: &[f64], targets: &[(usize, f64)], num_bins: usize, beta: f64) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), 2 * num_bins * targets.len(), "bin_loss: shape mismatch");
    let mut grad = vec![0.0; pred.len()];
    let mut total = 0.0;
    for (axis, &(bin, res)) in targets.iter().enumerate() {
        let base = 2 * num_bins * axis;
        let logits = &pred[base..base + num_bins];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        total += max + sum.ln() - logits[bin];
        for (k, l) in logits.iter().enumerate() {
            grad[base + k] = (l - max).exp() / sum - f64::from(u8::from(k == bin));
        }
        let (v, d) = smooth_l1(pred[base + num_bins + bin] - res, beta);
        total += v;
        grad[base + num_bins + bin] = d;
    }
    (total, grad)
}

/// Regression target for one box in a canonical frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxTarget {
    pub theta_bin: usize,
    pub theta_res: f64,
    /// `(x, y, z, h - h̄, w - w̄, l - l̄)`.
    pub reg: [f64; 6],
}

/// Heading bin loss plus smooth-L1 on center and anchor-relative size.
/// `pred` is `[theta logits; B] [theta residuals; B] [x y z h w l]`.
pub fn box_loss(pred: &[f64], target: &BoxTarget, cfg: &LossConfig) -> (f64, Vec<f64>) {
    let nb = cfg.theta_bins;
    assert_eq!(pred.len(), 2 * nb + 6, "box_loss: shape mismatch");
    let (mut total, mut grad) = bin_loss(&pred[..2 * nb], &[(target.theta_bin, target.theta_res)], nb, cfg.smooth_l1_beta);
    for (k, t) in target.reg.iter().enumerate() {
        let (v, d) = smooth_l1(pred[2 * nb + k] - t, cfg.smooth_l1_beta);
        total += v;
        grad.push(d);
    }
    (total, grad)
}

/// Best 3D IoU of `cuboid` against `gts`; zero when there are none.
pub fn best_iou(cuboid: &Cuboid, gts: &[Cuboid]) -> f64 {
    gts.iter().map(|g| iou_3d(cuboid, g)).fold(0.0, f64::max)
}

/// Smooth-L1 between the predicted confidence and the best 3D IoU of the
/// predicted box. Returns the value and the derivative in `pred`.
pub fn confidence_loss(pred: f64, cuboid: &Cuboid, gts: &[Cuboid], cfg: &LossConfig) -> (f64, f64) {
    smooth_l1(pred - best_iou(cuboid, gts), cfg.smooth_l1_beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn seg_loss_examples() {
        assert!(seg_loss(&[1.0], &[1.0], &cfg()).0.abs() < TOL);
        let expected = 0.25 * 0.25 * 2f64.ln();
        assert!((seg_loss(&[0.5], &[1.0], &cfg()).0 - expected).abs() < TOL);
        assert!((expected - 0.043322).abs() < 1e-6);
    }

    #[test]
    fn seg_loss_half_target_is_minimized_at_half() {
        let at_half = seg_loss(&[0.5], &[0.5], &cfg()).0;
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            assert!(seg_loss(&[p], &[0.5], &cfg()).0 >= at_half - TOL);
        }
    }

    #[test]
    fn bin_loss_examples() {
        let mut pred = vec![0.0; 20];
        let (l, _) = bin_loss(&pred, &[(3, 0.0)], 10, 1.0);
        assert!((l - 10f64.ln()).abs() < TOL);
        assert!((10f64.ln() - 2.302585).abs() < 1e-6);
        pred[3] = 1e3;
        pred[13] = 0.2;
        assert!(bin_loss(&pred, &[(3, 0.2)], 10, 1.0).0.abs() < TOL);
        let (l, _) = bin_loss(&pred, &[(3, 0.7)], 10, 1.0);
        assert!((l - 0.125).abs() < TOL);
    }

    #[test]
    fn box_loss_examples() {
        let c = cfg();
        let t = BoxTarget {
            theta_bin: 4,
            theta_res: -0.3,
            reg: [0.1, 0.9, -0.2, 0.05, -0.1, 0.3],
        };
        let mut pred = vec![0.0; 30];
        pred[4] = 1e3;
        pred[12 + 4] = -0.3;
        pred[24..].copy_from_slice(&t.reg);
        assert!(box_loss(&pred, &t, &c).0.abs() < TOL);
        pred[26] += 0.5;
        assert!((box_loss(&pred, &t, &c).0 - 0.125).abs() < TOL);
        pred[26] -= 0.5;
        // Argmax one bin off, residual of the target bin still exact.
        pred[4] = 0.0;
        pred[5] = 1e3;
        let (l, _) = box_loss(&pred, &t, &c);
        assert!((l - 1e3).abs() < 1e-6);
    }

    #[test]
    fn confidence_loss_examples() {
        let c = cfg();
        let b = Cuboid::new(0.0, 1.0, 10.0, 1.5, 1.6, 3.9, 0.2).unwrap();
        assert!(confidence_loss(1.0, &b, &[b], &c).0.abs() < TOL);
        assert!(confidence_loss(0.0, &b, &[], &c).0.abs() < TOL);
        // Unit cube against a copy shifted by half its length: IoU 1/3.
        let u = Cuboid::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let v = Cuboid::new(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert!(confidence_loss(1.0 / 3.0, &u, &[v], &c).0.abs() < 1e-9);
    }

    #[test]
    fn smooth_l1_is_continuous() {
        let (a, da) = smooth_l1(1.0 - 1e-12, 1.0);
        let (b, db) = smooth_l1(1.0, 1.0);
        assert!((a - b).abs() < 1e-9 && (da - db).abs() < 1e-9);
    }
}
