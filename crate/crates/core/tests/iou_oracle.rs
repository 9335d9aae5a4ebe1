//! Rotated-box IoU against an independent Monte Carlo estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevclick_core::geometry::{bev_iou, iou_3d, Cuboid};

/// Membership written from scratch: rotate into the box frame by hand.
fn inside(b: &Cuboid, x: f64, y: f64, z: f64) -> bool {
    let (dx, dz) = (x - b.cx, z - b.cz);
    let ang = b.theta;
    // World = R(ang) * local, with l along local x at ang = 0.
    let lx = dx * ang.cos() - dz * ang.sin();
    let lz = dx * ang.sin() + dz * ang.cos();
    lx.abs() <= b.l / 2.0 && lz.abs() <= b.w / 2.0 && (y - b.cy).abs() <= b.h / 2.0
}

fn mc_iou(a: &Cuboid, b: &Cuboid, n: usize, bev: bool, rng: &mut ChaCha8Rng) -> f64 {
    let r = |c: &Cuboid| 0.5 * c.l.hypot(c.w);
    let (x0, x1) = ((a.cx - r(a)).min(b.cx - r(b)), (a.cx + r(a)).max(b.cx + r(b)));
    let (z0, z1) = ((a.cz - r(a)).min(b.cz - r(b)), (a.cz + r(a)).max(b.cz + r(b)));
    let (y0, y1) = ((a.cy - a.h / 2.0).min(b.cy - b.h / 2.0), (a.cy + a.h / 2.0).max(b.cy + b.h / 2.0));
    let (mut ia, mut ib, mut both) = (0usize, 0usize, 0usize);
    for _ in 0..n {
        let x = rng.random_range(x0..x1);
        let z = rng.random_range(z0..z1);
        let (ya, yb) = if bev { (a.cy, b.cy) } else { let y = rng.random_range(y0..y1); (y, y) };
        let pa = inside(a, x, ya, z);
        let pb = inside(b, x, yb, z);
        ia += pa as usize;
        ib += pb as usize;
        both += (pa && pb) as usize;
    }
    let union = ia + ib - both;
    if union == 0 { 0.0 } else { both as f64 / union as f64 }
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Cuboid, Cuboid) {
    let mk = |rng: &mut ChaCha8Rng, cx: f64, cz: f64| Cuboid {
        cx,
        cy: rng.random_range(-0.5..0.5),
        cz,
        h: rng.random_range(1.0..2.0),
        w: rng.random_range(1.0..2.5),
        l: rng.random_range(2.0..5.0),
        theta: rng.random_range(-3.14..3.14),
    };
    let a = mk(rng, 0.0, 0.0);
    let (bx, bz) = (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
    let b = mk(rng, bx, bz);
    (a, b)
}

#[test]
fn iou_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let (a, b) = random_pair(&mut rng);
        let m3 = mc_iou(&a, &b, 200_000, false, &mut rng);
        let mb = mc_iou(&a, &b, 200_000, true, &mut rng);
        worst = worst.max((iou_3d(&a, &b) - m3).abs()).max((bev_iou(&a, &b) - mb).abs());
    }
    assert!(worst < 2e-2, "worst deviation {worst}");
}

#[test]
fn closed_form_values() {
    let a = Cuboid::new(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0).unwrap();
    let b = Cuboid { cx: 1.0, ..a };
    assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-6);
    // Unit squares rotated by 45 degrees about a shared center.
    let sq = Cuboid::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
    let rot = Cuboid { theta: std::f64::consts::FRAC_PI_4, ..sq };
    let inter = 2.0 * (2f64.sqrt() - 1.0);
    let expect = inter / (2.0 - inter);
    assert!((bev_iou(&sq, &rot) - expect).abs() < 1e-6);
    assert!((expect - 0.7071).abs() < 1e-3);
}
