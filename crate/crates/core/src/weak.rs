//! Turning click annotations into trainable signals.
//!
//! A click only fixes an object's horizontal center `(x_o, z_o)`; its height
//! is pinned to the sensor height, `y_o = 0`. From the clicks we derive a soft
//! per-point foreground field, pick the support points that vote for each
//! center, and encode every support point's offset to its center as a
//! (bin, residual) pair per horizontal axis.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, PointCloud};
use crate::kitti::ClickAnnotation;

/// Shape of the pseudo foreground field around a click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoShape {
    /// Soft ellipsoidal Gaussian falloff (cars).
    Gaussian,
    /// Binary vertical pillar (pedestrians).
    Pillar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    /// Distance below which a point is fully foreground.
    pub near_radius: f64,
    /// Mean of the attenuating Gaussian; the normalizer is its peak value.
    pub gaussian_mean: f64,
    /// Variance (m^2) of the attenuating Gaussian.
    pub gaussian_variance: f64,
    /// Weight on the squared vertical offset in the distance.
    pub y_weight: f64,
    pub shape: PseudoShape,
    pub pillar_radius: f64,
    /// Support points lie within this weighted distance of their center...
    pub support_radius: f64,
    /// ...and carry at least this much pseudo foreground.
    pub support_min_foreground: f64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            near_radius: 0.7,
            gaussian_mean: 0.7,
            gaussian_variance: 1.5,
            y_weight: 0.5,
            shape: PseudoShape::Gaussian,
            pillar_radius: 0.4,
            support_radius: 4.0,
            support_min_foreground: 0.1,
        }
    }
}

impl PseudoLabelConfig {
    pub fn pedestrian() -> Self {
        Self {
            shape: PseudoShape::Pillar,
            ..Self::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        self.gaussian_variance > 0.0 && self.near_radius >= 0.0 && self.pillar_radius > 0.0
    }
}

/// `d(p, o)` with the vertical term down-weighted and `y_o = 0`.
pub fn weighted_distance(p: &Point, o: &ClickAnnotation, cfg: &PseudoLabelConfig) -> f64 {
    let dx = p.x - o.x;
    let dz = p.z - o.z;
    (dx * dx + cfg.y_weight * p.y * p.y + dz * dz).sqrt()
}

/// Foreground assignment for a single point/center pair as a function of
/// the weighted distance: 1 inside the near radius, otherwise the Gaussian
/// density divided by its peak.
pub fn foreground_at_distance(d: f64, cfg: &PseudoLabelConfig) -> f64 {
    if d <= cfg.near_radius {
        1.0
    } else {
        let u = d - cfg.gaussian_mean;
        (-u * u / (2.0 * cfg.gaussian_variance)).exp()
    }
}

fn single_foreground(p: &Point, o: &ClickAnnotation, cfg: &PseudoLabelConfig) -> f64 {
    match cfg.shape {
        PseudoShape::Gaussian => foreground_at_distance(weighted_distance(p, o, cfg), cfg),
        PseudoShape::Pillar => {
            let h = ((p.x - o.x).powi(2) + (p.z - o.z).powi(2)).sqrt();
            if h <= cfg.pillar_radius {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Pseudo foreground value of `p`: the maximum over all click centers.
/// Zero when there are no centers.
pub fn pseudo_foreground(p: &Point, centers: &[ClickAnnotation], cfg: &PseudoLabelConfig) -> f64 {
    centers
        .iter()
        .map(|o| single_foreground(p, o, cfg))
        .fold(0.0, f64::max)
}

/// [`pseudo_foreground`] for every point of a cloud.
pub fn pseudo_foreground_field(
    cloud: &PointCloud,
    centers: &[ClickAnnotation],
    cfg: &PseudoLabelConfig,
) -> Vec<f64> {
    cloud
        .iter()
        .map(|p| pseudo_foreground(p, centers, cfg))
        .collect()
}

/// Points that vote for `center`: within the support radius (weighted
/// distance) and with pseudo foreground at least the support threshold.
pub fn select_support_points(
    cloud: &PointCloud,
    center: &ClickAnnotation,
    fg: &[f64],
    cfg: &PseudoLabelConfig,
) -> Vec<usize> {
    debug_assert_eq!(cloud.len(), fg.len());
    cloud
        .iter()
        .zip(fg)
        .enumerate()
        .filter(|(_, (p, &f))| {
            f >= cfg.support_min_foreground && weighted_distance(p, center, cfg) <= cfg.support_radius
        })
        .map(|(i, _)| i)
        .collect()
}

/// For each point, the center it supports (if any). When several centers
/// qualify, the nearest one in weighted distance wins; ties go to the lower
/// index.
pub fn support_assignments(
    cloud: &PointCloud,
    centers: &[ClickAnnotation],
    fg: &[f64],
    cfg: &PseudoLabelConfig,
) -> Vec<Option<usize>> {
    cloud
        .iter()
        .zip(fg)
        .map(|(p, &f)| {
            if f < cfg.support_min_foreground {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for (k, o) in centers.iter().enumerate() {
                let d = weighted_distance(p, o, cfg);
                if d <= cfg.support_radius && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((k, d));
                }
            }
            best.map(|(k, _)| k)
        })
        .collect()
}

/// Discretization of a bounded offset into uniform bins plus a residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinEncoderConfig {
    /// Offsets cover `[-half_range, half_range]`.
    pub half_range: f64,
    pub bin_size: f64,
    pub num_bins: usize,
}

impl Default for BinEncoderConfig {
    fn default() -> Self {
        Self {
            half_range: 4.0,
            bin_size: 0.8,
            num_bins: 10,
        }
    }
}

impl BinEncoderConfig {
    /// Residuals are expressed in units of half a bin.
    pub fn residual_scale(&self) -> f64 {
        0.5 * self.bin_size
    }

    pub fn is_valid(&self) -> bool {
        self.num_bins > 0
            && self.bin_size > 0.0
            && ((self.num_bins as f64) * self.bin_size - 2.0 * self.half_range).abs() < 1e-9
    }

    /// Encode one axis offset `u_p - u_o`. Offsets outside the range are
    /// clamped to the nearest edge.
    pub fn encode_offset(&self, offset: f64) -> (usize, f64) {
        let span = 2.0 * self.half_range;
        let shifted = (offset + self.half_range).clamp(0.0, span);
        let bin = ((shifted / self.bin_size).floor() as isize).clamp(0, self.num_bins as isize - 1) as usize;
        let res = (shifted - (bin as f64 * self.bin_size + 0.5 * self.bin_size)) / self.residual_scale();
        (bin, res)
    }

    /// Inverse of [`encode_offset`](Self::encode_offset) for in-range offsets.
    pub fn decode_offset(&self, bin: usize, res: f64) -> f64 {
        bin as f64 * self.bin_size + 0.5 * self.bin_size + res * self.residual_scale() - self.half_range
    }
}

/// Regression target for one support point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterTarget {
    pub bin_x: usize,
    pub bin_z: usize,
    pub res_x: f64,
    pub res_z: f64,
}

/// Encode where `o` lies relative to support point `p`.
pub fn encode_center(p: &Point, o: &ClickAnnotation, cfg: &BinEncoderConfig) -> CenterTarget {
    let (bin_x, res_x) = cfg.encode_offset(p.x - o.x);
    let (bin_z, res_z) = cfg.encode_offset(p.z - o.z);
    CenterTarget {
        bin_x,
        bin_z,
        res_x,
        res_z,
    }
}

/// Recover the center `(x_o, z_o)` voted by `p`.
pub fn decode_center(p: &Point, t: &CenterTarget, cfg: &BinEncoderConfig) -> (f64, f64) {
    (
        p.x - cfg.decode_offset(t.bin_x, t.res_x),
        p.z - cfg.decode_offset(t.bin_z, t.res_z),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn click(x: f64, z: f64) -> ClickAnnotation {
        ClickAnnotation::new("Car", x, z)
    }

    #[test]
    fn foreground_branches() {
        let cfg = PseudoLabelConfig::default();
        assert_eq!(foreground_at_distance(0.0, &cfg), 1.0);
        assert_eq!(foreground_at_distance(0.7, &cfg), 1.0);
        assert!((foreground_at_distance(0.7 + 1e-12, &cfg) - 1.0).abs() < 1e-9);
        assert!((foreground_at_distance(1.7, &cfg) - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((foreground_at_distance(1.7, &cfg) - 0.71653).abs() < 1e-5);
    }

    #[test]
    fn weighted_distance_halves_vertical() {
        let cfg = PseudoLabelConfig::default();
        let d = weighted_distance(&Point::new(1.0, 2.0, 0.0, 0.0), &click(1.0, 0.0), &cfg);
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_centers_give_zero() {
        let cfg = PseudoLabelConfig::default();
        assert_eq!(pseudo_foreground(&Point::default(), &[], &cfg), 0.0);
    }

    #[test]
    fn pillar_is_binary() {
        let cfg = PseudoLabelConfig::pedestrian();
        let c = [click(0.0, 0.0)];
        assert_eq!(pseudo_foreground(&Point::new(0.3, -5.0, 0.2, 0.0), &c, &cfg), 1.0);
        assert_eq!(pseudo_foreground(&Point::new(0.5, 0.0, 0.0, 0.0), &c, &cfg), 0.0);
    }

    #[test]
    fn support_selection_examples() {
        let cfg = PseudoLabelConfig::default();
        let cloud = PointCloud::new(vec![
            Point::new(3.0, 0.0, 0.0, 0.0),
            Point::new(5.0, 0.0, 0.0, 0.0),
            Point::new(0.0, 0.0, 3.0, 0.0),
        ]);
        let fg = [0.2, 0.5, 0.05];
        assert_eq!(select_support_points(&cloud, &click(0.0, 0.0), &fg, &cfg), vec![0]);
    }

    #[test]
    fn assignments_prefer_nearest_center() {
        let cfg = PseudoLabelConfig::default();
        let cloud = PointCloud::new(vec![Point::new(1.0, 0.0, 0.0, 0.0), Point::new(2.9, 0.0, 0.0, 0.0)]);
        let centers = [click(0.0, 0.0), click(3.0, 0.0)];
        let fg = pseudo_foreground_field(&cloud, &centers, &cfg);
        assert_eq!(support_assignments(&cloud, &centers, &fg, &cfg), vec![Some(0), Some(1)]);
    }

    #[test]
    fn encode_examples() {
        let cfg = BinEncoderConfig::default();
        assert!(cfg.is_valid());
        let (b, r) = cfg.encode_offset(0.0);
        assert_eq!(b, 5);
        assert!((r + 1.0).abs() < 1e-12);
        let (b, r) = cfg.encode_offset(3.6);
        assert_eq!(b, 9);
        assert!(r.abs() < 1e-12);
        let (b, r) = cfg.encode_offset(-4.0);
        assert_eq!(b, 0);
        assert!((r + 1.0).abs() < 1e-12);
        // Clamped edges.
        assert_eq!(cfg.encode_offset(4.0), cfg.encode_offset(9.0));
        let (b, r) = cfg.encode_offset(9.0);
        assert_eq!(b, 9);
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(cfg.encode_offset(-7.0), cfg.encode_offset(-4.0));
    }

    #[test]
    fn decode_examples() {
        let cfg = BinEncoderConfig::default();
        let t = CenterTarget {
            bin_x: 5,
            bin_z: 5,
            res_x: -1.0,
            res_z: -1.0,
        };
        let (x, z) = decode_center(&Point::new(0.0, 1.0, 0.0, 0.0), &t, &cfg);
        assert!(x.abs() < 1e-12 && z.abs() < 1e-12);

        let p = Point::new(10.0, 0.0, 20.0, 0.0);
        let o = click(10.0 - 3.6, 20.0 + 4.0);
        let (x, z) = decode_center(&p, &encode_center(&p, &o, &cfg), &cfg);
        assert!((x - 6.4).abs() < 1e-12 && (z - 24.0).abs() < 1e-12);
    }
}
