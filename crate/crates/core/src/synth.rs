//! Deterministic synthetic lidar scenes with exact groundtruth.
//!
//! A scene is a flat ground plane seen from a sensor at the origin, a few
//! non-overlapping cars (a lower body plus a cabin toward the rear) and some
//! background clutter (poles and walls). Points are sampled on the faces
//! that look toward the sensor with a range falloff; with shadowing on,
//! returns hidden behind a closer object in the bird's-eye view are dropped.
//! Scene `i` of seed `s` is a pure function of `(s, i)`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::eval::{assign_difficulty, DifficultyInput, GroundTruth, RegimeSet};
use crate::geometry::{bev_iou, points_in_cuboid, Cuboid, Frame, Point, PointCloud};
use crate::kitti::{self, CalibRecord, ClickAnnotation, Dataset, LabelRecord};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub scenes: usize,
    pub vehicles_min: usize,
    pub vehicles_max: usize,
    /// Class-mean size (h, w, l).
    pub size_mean: [f64; 3],
    /// Uniform half-width of the size jitter per dimension.
    pub size_jitter: [f64; 3],
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub yaw_range: (f64, f64),
    /// Ground height below the sensor (y is down).
    pub ground_y: f64,
    /// Surface returns per square meter at 10 m range.
    pub surface_density: f64,
    pub ground_points: usize,
    pub clutter_min: usize,
    pub clutter_max: usize,
    pub shadowing: bool,
    /// Gaussian jitter on every return.
    pub point_noise: f64,
    pub click_sigma_x: f64,
    pub click_sigma_z: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 10,
            vehicles_min: 2,
            vehicles_max: 5,
            size_mean: [1.53, 1.63, 3.88],
            size_jitter: [0.1, 0.1, 0.3],
            x_range: (-16.0, 16.0),
            z_range: (5.0, 38.0),
            yaw_range: (-PI, PI),
            ground_y: 1.73,
            surface_density: 30.0,
            ground_points: 1200,
            clutter_min: 2,
            clutter_max: 5,
            shadowing: true,
            point_noise: 0.02,
            click_sigma_x: 0.25,
            click_sigma_z: 0.75,
        }
    }
}

impl SynthConfig {
    pub fn is_valid(&self) -> bool {
        self.surface_density > 0.0
            && self.vehicles_min <= self.vehicles_max
            && self.clutter_min <= self.clutter_max
            && self.x_range.0 < self.x_range.1
            && self.z_range.0 < self.z_range.1
            && self.yaw_range.0 <= self.yaw_range.1
            && self.size_mean.iter().all(|v| *v > 0.0)
    }

    fn scene_rng(&self, index: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((index as u64) << 4) | stream);
        rng
    }
}

/// One generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub index: usize,
    pub cloud: PointCloud,
    pub boxes: Vec<Cuboid>,
    /// Scene points inside each box.
    pub point_counts: Vec<usize>,
}

impl SynthScene {
    pub fn id(&self) -> String {
        scene_id(self.index)
    }

    pub fn groundtruth(&self) -> Vec<GroundTruth> {
        self.boxes
            .iter()
            .zip(&self.point_counts)
            .map(|(b, &n)| GroundTruth {
                cuboid: *b,
                regimes: assign_difficulty(DifficultyInput::Synthetic { point_count: n }),
            })
            .collect()
    }

    /// KITTI label records. The occlusion field encodes the point-count
    /// difficulty (0 easy, 1 moderate, 2 hard, 3 none).
    pub fn labels(&self, calib: &CalibRecord) -> Vec<LabelRecord> {
        self.groundtruth()
            .iter()
            .map(|g| {
                let mut rec = LabelRecord::from_cuboid("Car", &g.cuboid, None, calib);
                rec.occlusion = occlusion_code(g.regimes);
                rec
            })
            .collect()
    }
}

fn occlusion_code(r: RegimeSet) -> i32 {
    if r.easy {
        0
    } else if r.moderate {
        1
    } else if r.hard {
        2
    } else {
        3
    }
}

pub fn scene_id(index: usize) -> String {
    format!("{index:06}")
}

fn q(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// An axis-aligned (in its own frame) solid used for sampling surfaces.
#[derive(Debug, Clone, Copy)]
struct Solid {
    body: Cuboid,
    intensity: (f64, f64),
}

enum Obstacle {
    Box(Cuboid),
    Pole { x: f64, z: f64, r: f64, top: f64, bottom: f64 },
}

/// Generate scene `index`.
pub fn generate_scene(cfg: &SynthConfig, index: usize) -> SynthScene {
    let mut rng = cfg.scene_rng(index, 0);
    let boxes = place_vehicles(cfg, &mut rng);
    let mut obstacles: Vec<Obstacle> = Vec::new();
    let mut points: Vec<Point> = Vec::new();

    for b in &boxes {
        for s in car_solids(b) {
            sample_solid(cfg, &s, &mut rng, &mut points);
        }
        obstacles.push(Obstacle::Box(*b));
    }

    let n_clutter = rng.random_range(cfg.clutter_min..=cfg.clutter_max);
    for _ in 0..n_clutter {
        for _attempt in 0..30 {
            let x = rng.random_range(cfg.x_range.0..cfg.x_range.1);
            let z = rng.random_range(cfg.z_range.0..cfg.z_range.1);
            let clear = boxes.iter().all(|b| b.bev_center_distance(x, z) > 0.5 * b.l.hypot(b.w) + 4.5);
            if !clear {
                continue;
            }
            if rng.random_bool(0.5) {
                let r = rng.random_range(0.1..0.25);
                let height = rng.random_range(2.0..4.0);
                let top = cfg.ground_y - height;
                sample_pole(cfg, (x, z, r, top), &mut rng, &mut points);
                obstacles.push(Obstacle::Pole {
                    x,
                    z,
                    r,
                    top,
                    bottom: cfg.ground_y,
                });
            } else {
                let h = rng.random_range(1.0..2.5);
                let wall = Cuboid {
                    cx: x,
                    cy: cfg.ground_y - 0.5 * h,
                    cz: z,
                    h,
                    w: rng.random_range(0.2..0.5),
                    l: rng.random_range(3.0..7.0),
                    theta: rng.random_range(-PI..PI),
                };
                sample_solid(
                    cfg,
                    &Solid {
                        body: wall,
                        intensity: (0.05, 0.6),
                    },
                    &mut rng,
                    &mut points,
                );
                obstacles.push(Obstacle::Box(wall));
            }
            break;
        }
    }

    sample_ground(cfg, &mut rng, &mut points);

    if cfg.point_noise > 0.0 {
        let n = Normal::new(0.0, cfg.point_noise).expect("positive sigma");
        for p in &mut points {
            p.x += n.sample(&mut rng);
            p.y += n.sample(&mut rng);
            p.z += n.sample(&mut rng);
        }
    }

    if cfg.shadowing {
        points.retain(|p| !occluded(p, &obstacles));
    }

    let cloud = PointCloud::new(points);
    let point_counts = boxes.iter().map(|b| points_in_cuboid(&cloud, b, 0.0).len()).collect();
    SynthScene {
        index,
        cloud,
        boxes,
        point_counts,
    }
}

fn place_vehicles(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Cuboid> {
    let n = rng.random_range(cfg.vehicles_min..=cfg.vehicles_max);
    let mut boxes: Vec<Cuboid> = Vec::with_capacity(n);
    for _ in 0..n {
        for _attempt in 0..60 {
            let jit = |rng: &mut ChaCha8Rng, k: usize| {
                let j = cfg.size_jitter[k];
                cfg.size_mean[k] + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 }
            };
            let (h, w, l) = (q(jit(rng, 0)), q(jit(rng, 1)), q(jit(rng, 2)));
            let x = q(rng.random_range(cfg.x_range.0..cfg.x_range.1));
            let z = q(rng.random_range(cfg.z_range.0..cfg.z_range.1));
            if x.atan2(z).abs() > 0.75 || x.hypot(z) < 5.0 {
                continue;
            }
            let yaw = if cfg.yaw_range.0 < cfg.yaw_range.1 {
                rng.random_range(cfg.yaw_range.0..cfg.yaw_range.1)
            } else {
                cfg.yaw_range.0
            };
            let Ok(cand) = Cuboid::new(x, cfg.ground_y - 0.5 * h, z, h, w, l, q(yaw)) else {
                continue;
            };
            let grown = Cuboid {
                w: cand.w + 1.2,
                l: cand.l + 1.2,
                ..cand
            };
            if boxes.iter().all(|b| bev_iou(&grown, b) == 0.0) {
                boxes.push(cand);
                break;
            }
        }
    }
    boxes
}

/// Lower body over the full footprint plus a narrower cabin toward the rear.
fn car_solids(b: &Cuboid) -> [Solid; 2] {
    let bottom = b.cy + 0.5 * b.h;
    let body_h = 0.6 * b.h;
    let cabin_h = b.h - body_h;
    let frame = Frame::from(b);
    let body = Cuboid {
        cy: bottom - 0.5 * body_h,
        h: body_h,
        ..*b
    };
    let cabin_len = 0.55 * b.l;
    let offset = -0.5 * b.l + 0.1 * b.l + 0.5 * cabin_len;
    let [cx, _, cz] = frame.to_world([offset, 0.0, 0.0]);
    let cabin = Cuboid {
        cx,
        cz,
        cy: bottom - body_h - 0.5 * cabin_h,
        h: cabin_h,
        w: 0.9 * b.w,
        l: cabin_len,
        ..*b
    };
    [
        Solid {
            body,
            intensity: (0.15, 0.9),
        },
        Solid {
            body: cabin,
            intensity: (0.05, 0.5),
        },
    ]
}

const SURFACE_INSET: f64 = 0.05;

fn falloff(range: f64) -> f64 {
    (10.0 / range.max(10.0)).powf(1.5)
}

fn random_round(rng: &mut ChaCha8Rng, v: f64) -> usize {
    let base = v.floor();
    base as usize + usize::from(rng.random::<f64>() < v - base)
}

/// Sample the faces of `s` that face the sensor.
fn sample_solid(cfg: &SynthConfig, s: &Solid, rng: &mut ChaCha8Rng, out: &mut Vec<Point>) {
    let b = &s.body;
    let frame = Frame::from(b);
    // Returns sit slightly inside the solid so jitter keeps them in the box.
    let inset = |half: f64| (half - SURFACE_INSET).max(0.5 * half);
    let (hl, hh, hw) = (inset(0.5 * b.l), inset(0.5 * b.h), inset(0.5 * b.w));
    // (local normal axis, sign, extent of the two in-face axes)
    let faces: [([f64; 3], f64); 5] = [
        ([1.0, 0.0, 0.0], b.h * b.w),
        ([-1.0, 0.0, 0.0], b.h * b.w),
        ([0.0, 0.0, 1.0], b.h * b.l),
        ([0.0, 0.0, -1.0], b.h * b.l),
        ([0.0, -1.0, 0.0], b.l * b.w),
    ];
    let sensor_local = frame.to_local([0.0, 0.0, 0.0]);
    for (n, area) in faces {
        let face_center = [n[0] * hl, n[1] * hh, n[2] * hw];
        let to_sensor = [
            sensor_local[0] - face_center[0],
            sensor_local[1] - face_center[1],
            sensor_local[2] - face_center[2],
        ];
        let facing = n[0] * to_sensor[0] + n[1] * to_sensor[1] + n[2] * to_sensor[2];
        if facing <= 0.0 {
            continue;
        }
        let world_center = frame.to_world(face_center);
        let range = (world_center[0].powi(2) + world_center[1].powi(2) + world_center[2].powi(2)).sqrt();
        // Grazing faces return fewer points.
        let dist = (to_sensor[0].powi(2) + to_sensor[1].powi(2) + to_sensor[2].powi(2)).sqrt();
        let incidence = (facing / dist).clamp(0.0, 1.0);
        let expected = cfg.surface_density * area * falloff(range) * incidence.sqrt();
        let n_pts = random_round(rng, expected);
        for _ in 0..n_pts {
            let u = rng.random_range(-1.0..1.0);
            let v = rng.random_range(-1.0..1.0);
            let local = if n[0] != 0.0 {
                [n[0] * hl, u * hh, v * hw]
            } else if n[2] != 0.0 {
                [u * hl, v * hh, n[2] * hw]
            } else {
                [u * hl, -hh, v * hw]
            };
            let [x, y, z] = frame.to_world(local);
            let i = rng.random_range(s.intensity.0..s.intensity.1);
            out.push(Point::new(x, y, z, i));
        }
    }
}

fn sample_pole(cfg: &SynthConfig, (x, z, r, top): (f64, f64, f64, f64), rng: &mut ChaCha8Rng, out: &mut Vec<Point>) {
    let height = cfg.ground_y - top;
    let range = x.hypot(z);
    // Visible half of the cylinder.
    let area = PI * r * height;
    let n_pts = random_round(rng, cfg.surface_density * area * falloff(range));
    let facing = (-x).atan2(-z);
    for _ in 0..n_pts {
        let a = facing + rng.random_range(-0.5 * PI..0.5 * PI);
        let y = rng.random_range(top..cfg.ground_y);
        out.push(Point::new(x + r * a.sin(), y, z + r * a.cos(), rng.random_range(0.1..0.7)));
    }
}

fn sample_ground(cfg: &SynthConfig, rng: &mut ChaCha8Rng, out: &mut Vec<Point>) {
    let max_range = cfg.z_range.1 + 6.0;
    for _ in 0..cfg.ground_points {
        let r = rng.random_range(3.0..max_range);
        let a = rng.random_range(-0.8..0.8);
        let (x, z) = (r * f64::sin(a), r * f64::cos(a));
        out.push(Point::new(x, cfg.ground_y, z, rng.random_range(0.0..0.3)));
    }
}

/// Whether the sensor ray to `p` is blocked in the bird's-eye view by an
/// obstacle closer than `p` that also covers `p`'s height.
fn occluded(p: &Point, obstacles: &[Obstacle]) -> bool {
    let range = p.x.hypot(p.z);
    if range <= 0.0 {
        return false;
    }
    let dir = [p.x / range, p.z / range];
    obstacles.iter().any(|o| match o {
        Obstacle::Box(b) => {
            if p.y < b.y_range().0 || b.contains(p, 0.1) {
                return false;
            }
            ray_box_entry(b, dir).is_some_and(|t| t < range - 0.15)
        }
        Obstacle::Pole { x, z, r, top, bottom } => {
            if p.y < *top || p.y > *bottom + 0.1 {
                return false;
            }
            let along = x * dir[0] + z * dir[1];
            let perp = (x * dir[1] - z * dir[0]).abs();
            perp < *r && along - r < range - 0.15 && along > 0.0
        }
    })
}

/// Distance along a BEV ray from the origin to its entry into the box
/// footprint.
fn ray_box_entry(b: &Cuboid, dir: [f64; 2]) -> Option<f64> {
    let (s, c) = b.theta.sin_cos();
    // Origin and direction in the box frame.
    let ox = c * (-b.cx) - s * (-b.cz);
    let oz = s * (-b.cx) + c * (-b.cz);
    let dx = c * dir[0] - s * dir[1];
    let dz = s * dir[0] + c * dir[1];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for (o, d, half) in [(ox, dx, 0.5 * b.l), (oz, dz, 0.5 * b.w)] {
        if d.abs() < 1e-12 {
            if o.abs() > half {
                return None;
            }
        } else {
            let (a, bb) = ((-half - o) / d, (half - o) / d);
            t0 = t0.max(a.min(bb));
            t1 = t1.min(a.max(bb));
        }
    }
    (t0 <= t1).then_some(t0)
}

/// One noisy click per groundtruth box.
pub fn generate_clicks<R: Rng + ?Sized>(boxes: &[Cuboid], cfg: &SynthConfig, rng: &mut R) -> Vec<ClickAnnotation> {
    let nx = Normal::new(0.0, cfg.click_sigma_x.max(0.0)).expect("valid sigma");
    let nz = Normal::new(0.0, cfg.click_sigma_z.max(0.0)).expect("valid sigma");
    boxes
        .iter()
        .map(|b| ClickAnnotation::new("Car", b.cx + nx.sample(rng), b.cz + nz.sample(rng)))
        .collect()
}

/// Deterministic clicks for scene `index`.
pub fn scene_clicks(cfg: &SynthConfig, scene: &SynthScene) -> Vec<ClickAnnotation> {
    let mut rng = cfg.scene_rng(scene.index, 1);
    generate_clicks(&scene.boxes, cfg, &mut rng)
}

/// Generate scenes `start..start+count`.
pub fn generate_range(cfg: &SynthConfig, start: usize, count: usize, exec: Execution) -> Vec<SynthScene> {
    par::map_range(exec, count, |k| generate_scene(cfg, start + k))
}

/// Write `cfg.scenes` scenes as a KITTI tree under `root`, plus clicks.
pub fn write_dataset(cfg: &SynthConfig, root: &Path, exec: Execution) -> kitti::Result<Dataset> {
    let ds = Dataset::new(root);
    let calib = CalibRecord::synthetic();
    let results = par::map_range(exec, cfg.scenes, |i| {
        let scene = generate_scene(cfg, i);
        let id = scene.id();
        ds.write_scene(&id, &scene.cloud, &calib, &scene.labels(&calib))?;
        ds.write_clicks(&id, &scene_clicks(cfg, &scene))
    });
    results.into_iter().collect::<kitti::Result<Vec<()>>>()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_index() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_scene(&cfg, 3), generate_scene(&cfg, 3));
        assert_ne!(generate_scene(&cfg, 3).cloud, generate_scene(&cfg, 4).cloud);
    }

    #[test]
    fn zero_sigma_clicks_hit_centers() {
        let cfg = SynthConfig {
            click_sigma_x: 0.0,
            click_sigma_z: 0.0,
            ..SynthConfig::default()
        };
        let scene = generate_scene(&cfg, 0);
        let clicks = scene_clicks(&cfg, &scene);
        assert_eq!(clicks.len(), scene.boxes.len());
        for (c, b) in clicks.iter().zip(&scene.boxes) {
            assert_eq!((c.x, c.z), (b.cx, b.cz));
        }
    }

    #[test]
    fn unshadowed_boxes_have_points() {
        let cfg = SynthConfig {
            shadowing: false,
            ..SynthConfig::default()
        };
        for i in 0..10 {
            let s = generate_scene(&cfg, i);
            assert!(s.point_counts.iter().all(|&n| n >= 1), "{:?}", s.point_counts);
        }
    }

    #[test]
    fn ray_entry() {
        let b = Cuboid::new(0.0, 0.0, 10.0, 1.0, 2.0, 4.0, 0.0).unwrap();
        let t = ray_box_entry(&b, [0.0, 1.0]).unwrap();
        assert!((t - 9.0).abs() < 1e-12);
        assert!(ray_box_entry(&b, [1.0, 0.0]).is_none());
    }
}
