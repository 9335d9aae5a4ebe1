//! Data augmentation for stage-1 scenes and stage-2 proposal blocks.
//!
//! Each augmentation is drawn first as a plain parameter struct and then
//! applied, so an identity draw leaves its input untouched.

use std::f64::consts::PI;

use bevclick_core::geometry::{normalize_angle, Cuboid, Point, PointCloud};
use bevclick_core::kitti::ClickAnnotation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::crop::{FeatureBlock, FG, X, Z};

/// Rigid motion plus mirror and uniform scale about the origin:
/// translate, mirror `x`, scale, then rotate about `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub shift: [f64; 3],
    pub flip: bool,
    pub scale: f64,
    pub yaw: f64,
}

impl Similarity {
    pub const IDENTITY: Self = Self {
        shift: [0.0; 3],
        flip: false,
        scale: 1.0,
        yaw: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        if self.is_identity() {
            return p;
        }
        let mut x = p[0] + self.shift[0];
        let y = p[1] + self.shift[1];
        let z = p[2] + self.shift[2];
        if self.flip {
            x = -x;
        }
        let (s, c) = self.yaw.sin_cos();
        let (x, y, z) = (x * self.scale, y * self.scale, z * self.scale);
        [c * x + s * z, y, -s * x + c * z]
    }

    pub fn apply_box(&self, b: &Cuboid) -> Cuboid {
        if self.is_identity() {
            return *b;
        }
        let [cx, cy, cz] = self.apply([b.cx, b.cy, b.cz]);
        let theta = if self.flip { PI - b.theta } else { b.theta };
        Cuboid {
            cx,
            cy,
            cz,
            h: b.h * self.scale,
            w: b.w * self.scale,
            l: b.l * self.scale,
            theta: normalize_angle(theta + self.yaw),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneAugmentConfig {
    pub flip_prob: f64,
    pub scale_range: (f64, f64),
    pub max_yaw: f64,
    pub insert_prob: f64,
    /// Inserted copies keep this distance from every click.
    pub insert_gap: f64,
    pub drop_prob: f64,
    pub max_drop_fraction: f64,
    /// Radius of the cylinder copied or thinned around a click.
    pub radius: f64,
}

impl Default for SceneAugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            scale_range: (0.95, 1.05),
            max_yaw: 10f64.to_radians(),
            insert_prob: 0.5,
            insert_gap: 8.0,
            drop_prob: 0.3,
            max_drop_fraction: 0.5,
            radius: 4.0,
        }
    }
}

/// Drawn scene augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAugment {
    pub global: Similarity,
    /// Copy click `source`'s cylinder, rotated about the sensor by `angle`.
    pub insert: Option<(usize, f64)>,
    /// Per click, the fraction of its cylinder's points to drop.
    pub drop: Vec<f64>,
    pub seed: u64,
}

impl SceneAugment {
    pub fn identity() -> Self {
        Self {
            global: Similarity::IDENTITY,
            insert: None,
            drop: Vec::new(),
            seed: 0,
        }
    }

    pub fn draw<R: Rng + ?Sized>(cfg: &SceneAugmentConfig, clicks: &[ClickAnnotation], rng: &mut R) -> Self {
        let global = Similarity {
            shift: [0.0; 3],
            flip: rng.random_bool(cfg.flip_prob),
            scale: rng.random_range(cfg.scale_range.0..=cfg.scale_range.1),
            yaw: rng.random_range(-cfg.max_yaw..=cfg.max_yaw),
        };
        let insert = (!clicks.is_empty() && rng.random_bool(cfg.insert_prob))
            .then(|| (rng.random_range(0..clicks.len()), rng.random_range(-0.6..0.6)));
        let drop = clicks
            .iter()
            .map(|_| {
                if rng.random_bool(cfg.drop_prob) {
                    rng.random_range(0.0..cfg.max_drop_fraction)
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            global,
            insert,
            drop,
            seed: rng.random(),
        }
    }

    pub fn apply(&self, cloud: &PointCloud, clicks: &[ClickAnnotation], cfg: &SceneAugmentConfig) -> (PointCloud, Vec<ClickAnnotation>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let r2 = cfg.radius * cfg.radius;
        let near = |p: &Point, c: &ClickAnnotation| (p.x - c.x).powi(2) + (p.z - c.z).powi(2) <= r2;
        let mut points: Vec<Point> = Vec::with_capacity(cloud.len());
        for p in cloud.iter() {
            let owner = clicks.iter().position(|c| near(p, c));
            let f = owner.and_then(|k| self.drop.get(k)).copied().unwrap_or(0.0);
            if f > 0.0 && rng.random_bool(f) {
                continue;
            }
            points.push(*p);
        }
        let mut clicks = clicks.to_vec();
        if let Some((src, angle)) = self.insert {
            let rot = Similarity {
                yaw: angle,
                ..Similarity::IDENTITY
            };
            let s = clicks[src].clone();
            let [nx, _, nz] = rot.apply([s.x, 0.0, s.z]);
            let gap2 = cfg.insert_gap * cfg.insert_gap;
            if clicks.iter().all(|c| (c.x - nx).powi(2) + (c.z - nz).powi(2) > gap2) {
                let target = ClickAnnotation::new(s.class.clone(), nx, nz);
                let copies: Vec<Point> = points
                    .iter()
                    .filter(|p| near(p, &s))
                    .map(|p| {
                        let [x, y, z] = rot.apply(p.xyz());
                        Point::new(x, y, z, p.intensity)
                    })
                    .collect();
                points.retain(|p| !near(p, &target));
                points.extend(copies);
                clicks.push(target);
            }
        }
        if !self.global.is_identity() {
            for p in &mut points {
                let [x, y, z] = self.global.apply(p.xyz());
                *p = Point::new(x, y, z, p.intensity);
            }
            for c in &mut clicks {
                let [x, _, z] = self.global.apply([c.x, 0.0, c.z]);
                c.x = x;
                c.z = z;
            }
        }
        (PointCloud::new(points), clicks)
    }
}

/// Draw and apply a scene augmentation.
pub fn augment_scene<R: Rng + ?Sized>(
    cloud: &PointCloud,
    clicks: &[ClickAnnotation],
    cfg: &SceneAugmentConfig,
    rng: &mut R,
) -> (PointCloud, Vec<ClickAnnotation>) {
    SceneAugment::draw(cfg, clicks, rng).apply(cloud, clicks, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalAugmentConfig {
    pub flip_prob: f64,
    pub scale_range: (f64, f64),
    pub max_yaw: f64,
    /// Standard deviation of the center jitter per axis.
    pub jitter_sigma: f64,
    pub label_flip_prob: f64,
    /// Per-point probability of flipping the foreground score when drawn.
    pub label_flip_rate: f64,
    pub sector_prob: f64,
    pub removal_prob: f64,
    pub max_removal_fraction: f64,
    pub min_points: usize,
}

impl Default for ProposalAugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            scale_range: (0.8, 1.2),
            max_yaw: PI / 2.0,
            jitter_sigma: 0.1f64.sqrt(),
            label_flip_prob: 0.3,
            label_flip_rate: 0.1,
            sector_prob: 0.3,
            removal_prob: 0.3,
            max_removal_fraction: 0.5,
            min_points: 32,
        }
    }
}

impl ProposalAugmentConfig {
    /// Milder draw for crops already aligned with a generated cuboid.
    pub fn refine() -> Self {
        Self {
            scale_range: (0.95, 1.05),
            max_yaw: 10f64.to_radians(),
            jitter_sigma: 0.1,
            ..Self::default()
        }
    }
}

/// Drawn proposal augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalAugment {
    pub motion: Similarity,
    pub label_flip_rate: f64,
    /// Omitted azimuth sector `(start, span)` around the box center.
    pub sector: Option<(f64, f64)>,
    pub removal_fraction: f64,
    pub min_points: usize,
    pub seed: u64,
}

impl ProposalAugment {
    pub fn identity() -> Self {
        Self {
            motion: Similarity::IDENTITY,
            label_flip_rate: 0.0,
            sector: None,
            removal_fraction: 0.0,
            min_points: 32,
            seed: 0,
        }
    }

    pub fn draw<R: Rng + ?Sized>(cfg: &ProposalAugmentConfig, rng: &mut R) -> Self {
        let jitter = Normal::new(0.0, cfg.jitter_sigma).expect("valid sigma");
        let motion = Similarity {
            shift: [jitter.sample(rng), jitter.sample(rng), jitter.sample(rng)],
            flip: rng.random_bool(cfg.flip_prob),
            scale: rng.random_range(cfg.scale_range.0..=cfg.scale_range.1),
            yaw: rng.random_range(-cfg.max_yaw..=cfg.max_yaw),
        };
        let label_flip_rate = if rng.random_bool(cfg.label_flip_prob) { cfg.label_flip_rate } else { 0.0 };
        let sector = rng
            .random_bool(cfg.sector_prob)
            .then(|| (rng.random_range(-PI..PI), rng.random_range(0.5 * PI..=1.5 * PI)));
        let removal_fraction = if rng.random_bool(cfg.removal_prob) {
            rng.random_range(0.0..cfg.max_removal_fraction)
        } else {
            0.0
        };
        Self {
            motion,
            label_flip_rate,
            sector,
            removal_fraction,
            min_points: cfg.min_points,
            seed: rng.random(),
        }
    }

    /// Apply to a block and its groundtruth box (both in the block frame).
    /// The block keeps its row count; removals are refilled by repetition.
    pub fn apply(&self, block: &FeatureBlock, gt: Option<&Cuboid>) -> (FeatureBlock, Option<Cuboid>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = block.len();
        let floor = self.min_points.min(n);
        let mut rows = block.rows();
        if let Some((start, span)) = self.sector {
            let (cx, cz) = gt.map_or((0.0, 0.0), |b| (b.cx, b.cz));
            let kept: Vec<[f64; 5]> = rows
                .iter()
                .copied()
                .filter(|r| {
                    let a = (r[Z] - cz).atan2(r[X] - cx);
                    normalize_angle(a - start).rem_euclid(2.0 * PI) > span
                })
                .collect();
            if kept.len() >= floor {
                rows = kept;
            }
        }
        if self.removal_fraction > 0.0 {
            let target = ((rows.len() as f64) * (1.0 - self.removal_fraction)).ceil() as usize;
            let target = target.max(floor).min(rows.len());
            let keep = rand::seq::index::sample(&mut rng, rows.len(), target);
            let mut keep = keep.into_vec();
            keep.sort_unstable();
            rows = keep.into_iter().map(|i| rows[i]).collect();
        }
        for r in &mut rows {
            if self.label_flip_rate > 0.0 && rng.random_bool(self.label_flip_rate) {
                r[FG] = 1.0 - r[FG];
            }
            let [x, y, z] = self.motion.apply([r[0], r[1], r[2]]);
            r[0] = x;
            r[1] = y;
            r[2] = z;
        }
        let mut out = FeatureBlock::from_rows(rows);
        if out.len() != n {
            out = out.resampled(n, &mut rng);
        }
        (out, gt.map(|b| self.motion.apply_box(b)))
    }
}

/// Draw and apply a proposal augmentation.
pub fn augment_proposal<R: Rng + ?Sized>(
    block: &FeatureBlock,
    gt: Option<&Cuboid>,
    cfg: &ProposalAugmentConfig,
    rng: &mut R,
) -> (FeatureBlock, Option<Cuboid>) {
    ProposalAugment::draw(cfg, rng).apply(block, gt)
}
