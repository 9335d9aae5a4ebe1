//! Heading and box codec round trips.

use std::f64::consts::PI;

use bevclick_core::geometry::{normalize_angle, Cuboid};
use bevclick_detector::codec::BoxCodec;
use bevclick_detector::config::LossConfig;
use proptest::prelude::*;

fn codec() -> BoxCodec {
    BoxCodec::new(&LossConfig::default(), [1.53, 1.63, 3.88])
}

fn angle_gap(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// A prediction row that selects `bin` with residual `res`.
fn row_for(codec: &BoxCodec, bin: usize, res: f64, reg: [f64; 6]) -> Vec<f64> {
    let nb = codec.theta.num_bins;
    let mut row = vec![0.0; codec.outputs()];
    row[bin] = 1.0;
    row[nb + bin] = res;
    row[2 * nb..].copy_from_slice(&reg);
    row
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn theta_roundtrip(theta in -PI..PI) {
        let c = codec();
        let (bin, res) = c.encode_theta(theta);
        prop_assert!(bin < 12 && (-1.0..=1.0).contains(&res));
        prop_assert!(angle_gap(c.decode_theta(bin, res), theta) < 1e-12);
    }

    #[test]
    fn predicted_theta_reencodes(bin in 0usize..12, res in -3.0..3.0f64) {
        let c = codec();
        let theta = c.decode(&row_for(&c, bin, res, [0.0; 6])).theta;
        prop_assert!((-PI..PI).contains(&theta));
        let (b2, r2) = c.encode_theta(theta);
        prop_assert!(angle_gap(c.decode_theta(b2, r2), theta) < 1e-12);
    }

    #[test]
    fn box_roundtrip(
        cx in -2.0..2.0f64, cy in -1.0..1.0f64, cz in -2.0..2.0f64,
        h in 1.0..2.0f64, w in 1.0..2.0f64, l in 3.0..5.0f64, theta in -PI..PI,
    ) {
        let c = codec();
        let b = Cuboid::new(cx, cy, cz, h, w, l, theta).unwrap();
        let t = c.encode(&b);
        let d = c.decode(&row_for(&c, t.theta_bin, t.theta_res, t.reg));
        for (u, v) in [(d.cx, b.cx), (d.cy, b.cy), (d.cz, b.cz), (d.h, b.h), (d.w, b.w), (d.l, b.l)] {
            prop_assert!((u - v).abs() < 1e-12);
        }
        prop_assert!(angle_gap(d.theta, b.theta) < 1e-12);
    }
}
