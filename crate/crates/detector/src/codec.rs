//! Encoding of cuboids as stage-2 regression targets and back.

use bevclick_core::geometry::{normalize_angle, Cuboid};
use bevclick_core::weak::BinEncoderConfig;

use crate::config::LossConfig;
use crate::losses::BoxTarget;

/// Smallest size a decoded box may have.
const MIN_SIZE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCodec {
    pub theta: BinEncoderConfig,
    /// Mean `(h, w, l)`; sizes are regressed as offsets from it.
    pub anchor: [f64; 3],
}

impl BoxCodec {
    pub fn new(loss: &LossConfig, anchor: [f64; 3]) -> Self {
        Self {
            theta: loss.theta_codec(),
            anchor,
        }
    }

    /// Width of a box prediction row.
    pub fn outputs(&self) -> usize {
        2 * self.theta.num_bins + 6
    }

    pub fn encode_theta(&self, theta: f64) -> (usize, f64) {
        self.theta.encode_offset(normalize_angle(theta))
    }

    pub fn decode_theta(&self, bin: usize, res: f64) -> f64 {
        normalize_angle(self.theta.decode_offset(bin, res))
    }

    /// Target for a box expressed in the canonical frame.
    pub fn encode(&self, b: &Cuboid) -> BoxTarget {
        let (theta_bin, theta_res) = self.encode_theta(b.theta);
        BoxTarget {
            theta_bin,
            theta_res,
            reg: [
                b.cx,
                b.cy,
                b.cz,
                b.h - self.anchor[0],
                b.w - self.anchor[1],
                b.l - self.anchor[2],
            ],
        }
    }

    /// Box from a prediction row: argmax heading bin plus its residual,
    /// center as predicted, sizes clamped to stay positive.
    pub fn decode(&self, pred: &[f64]) -> Cuboid {
        let nb = self.theta.num_bins;
        assert_eq!(pred.len(), self.outputs(), "decode: shape mismatch");
        let bin = argmax(&pred[..nb]);
        let r = &pred[2 * nb..];
        let size = |k: usize| (self.anchor[k] + r[3 + k]).max(MIN_SIZE);
        Cuboid {
            cx: r[0],
            cy: r[1],
            cz: r[2],
            h: size(0),
            w: size(1),
            l: size(2),
            theta: self.decode_theta(bin, pred[nb + bin]),
        }
    }
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
