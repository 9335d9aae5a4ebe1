//! Points, oriented cuboids, cylinders and the IoU kernels.
//!
//! Frame convention: x right, y down (vertical), z forward. A cuboid's yaw
//! `theta` follows KITTI `rotation_y`: at `theta = 0` the length axis `l`
//! points along +x and the width axis `w` along +z. Rotating by `theta`
//! maps object-local `(lx, lz)` to world `(x, z)` as
//!
//! ```text
//! x = cx + cos(theta) * lx + sin(theta) * lz
//! z = cz - sin(theta) * lx + cos(theta) * lz
//! ```
//!
//! The cuboid center is the center of volume, so its vertical extent is
//! `[cy - h/2, cy + h/2]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("cuboid dimensions must be finite and positive, got h={h} w={w} l={l}")]
    BadDimensions { h: f64, w: f64, l: f64 },
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("cylinder radius must be positive, got {0}")]
    BadRadius(f64),
}

/// A single lidar return.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && (0.0..=1.0).contains(&self.intensity)
    }
}

/// Ordered point list. Index identity matters: grouping and cropping refer
/// back to points by position.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(Point::xyz).collect()
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn is_valid(&self) -> bool {
        self.points.iter().all(Point::is_valid)
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// Wrap an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a - two_pi * ((a + PI) / two_pi).floor();
    if r >= PI {
        r -= two_pi;
    }
    if r < -PI {
        r += two_pi;
    }
    r
}

/// Oriented 3D box. `(cx, cy, cz)` is the center of volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub theta: f64,
}

impl Cuboid {
    /// Validating constructor; wraps `theta` into `[-pi, pi)`.
    pub fn new(
        cx: f64,
        cy: f64,
        cz: f64,
        h: f64,
        w: f64,
        l: f64,
        theta: f64,
    ) -> Result<Self, GeometryError> {
        if !(h.is_finite() && w.is_finite() && l.is_finite() && h > 0.0 && w > 0.0 && l > 0.0) {
            return Err(GeometryError::BadDimensions { h, w, l });
        }
        if !(cx.is_finite() && cy.is_finite() && cz.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite("cuboid"));
        }
        Ok(Self {
            cx,
            cy,
            cz,
            h,
            w,
            l,
            theta: normalize_angle(theta),
        })
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.cz, self.theta].iter().all(|v| v.is_finite())
            && self.h > 0.0
            && self.w > 0.0
            && self.l > 0.0
            && (-PI..PI).contains(&self.theta)
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.cy - 0.5 * self.h, self.cy + 0.5 * self.h)
    }

    /// Footprint corners on the (x, z)-plane in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, lz]| [self.cx + c * lx + s * lz, self.cz - s * lx + c * lz])
    }

    /// The eight corners: bottom face (larger y) first, then the top face.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let bev = self.bev_corners();
        let (y0, y1) = self.y_range();
        let mut out = [[0.0; 3]; 8];
        for (i, [x, z]) in bev.iter().enumerate() {
            out[i] = [*x, y1, *z];
            out[i + 4] = [*x, y0, *z];
        }
        out
    }

    /// True if `p` lies inside the box grown by `margin` on every side.
    pub fn contains(&self, p: &Point, margin: f64) -> bool {
        let [lx, ly, lz] = Frame::from(self).to_local([p.x, p.y, p.z]);
        lx.abs() <= 0.5 * self.l + margin
            && ly.abs() <= 0.5 * self.h + margin
            && lz.abs() <= 0.5 * self.w + margin
    }

    pub fn bev_center_distance(&self, x: f64, z: f64) -> f64 {
        ((self.cx - x).powi(2) + (self.cz - z).powi(2)).sqrt()
    }
}

/// Vertical cylinder with unbounded y-extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderProposal {
    pub cx: f64,
    pub cz: f64,
    pub radius: f64,
    pub confidence: f64,
}

impl CylinderProposal {
    pub fn new(cx: f64, cz: f64, radius: f64, confidence: f64) -> Result<Self, GeometryError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::BadRadius(radius));
        }
        if !(cx.is_finite() && cz.is_finite()) {
            return Err(GeometryError::NonFinite("cylinder"));
        }
        Ok(Self {
            cx,
            cz,
            radius,
            confidence,
        })
    }

    pub fn contains(&self, p: &Point) -> bool {
        let dx = p.x - self.cx;
        let dz = p.z - self.cz;
        dx * dx + dz * dz <= self.radius * self.radius
    }
}

/// Indices of points whose horizontal distance to the cylinder axis is at
/// most the radius. The y coordinate is ignored.
pub fn points_in_cylinder(cloud: &PointCloud, prop: &CylinderProposal) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| prop.contains(p))
        .map(|(i, _)| i)
        .collect()
}

/// Indices of points inside `cuboid` grown by `margin`.
pub fn points_in_cuboid(cloud: &PointCloud, cuboid: &Cuboid, margin: f64) -> Vec<usize> {
    let frame = Frame::from(cuboid);
    let (hl, hh, hw) = (
        0.5 * cuboid.l + margin,
        0.5 * cuboid.h + margin,
        0.5 * cuboid.w + margin,
    );
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let [lx, ly, lz] = frame.to_local(p.xyz());
            lx.abs() <= hl && ly.abs() <= hh && lz.abs() <= hw
        })
        .map(|(i, _)| i)
        .collect()
}

/// A canonical coordinate frame.
///
/// Cylinders give a translation on the (x, z)-plane only. Cuboids give a
/// full rigid transform: translate the center to the origin, then rotate by
/// `-theta` about y so the box is axis-aligned with `l` along +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frame {
    Translation { cx: f64, cz: f64 },
    Rigid { cx: f64, cy: f64, cz: f64, theta: f64 },
}

impl From<&CylinderProposal> for Frame {
    fn from(c: &CylinderProposal) -> Self {
        Frame::Translation { cx: c.cx, cz: c.cz }
    }
}

impl From<&Cuboid> for Frame {
    fn from(b: &Cuboid) -> Self {
        Frame::Rigid {
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            theta: b.theta,
        }
    }
}

impl Frame {
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            Frame::Translation { cx, cz } => [p[0] - cx, p[1], p[2] - cz],
            Frame::Rigid { cx, cy, cz, theta } => {
                let (s, c) = theta.sin_cos();
                let (dx, dy, dz) = (p[0] - cx, p[1] - cy, p[2] - cz);
                [c * dx - s * dz, dy, s * dx + c * dz]
            }
        }
    }

    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            Frame::Translation { cx, cz } => [p[0] + cx, p[1], p[2] + cz],
            Frame::Rigid { cx, cy, cz, theta } => {
                let (s, c) = theta.sin_cos();
                [cx + c * p[0] + s * p[2], cy + p[1], cz - s * p[0] + c * p[2]]
            }
        }
    }

    fn yaw(&self) -> f64 {
        match *self {
            Frame::Translation { .. } => 0.0,
            Frame::Rigid { theta, .. } => theta,
        }
    }

    /// Express a world cuboid in this frame.
    pub fn cuboid_to_local(&self, b: &Cuboid) -> Cuboid {
        let [x, y, z] = self.to_local([b.cx, b.cy, b.cz]);
        Cuboid {
            cx: x,
            cy: y,
            cz: z,
            theta: normalize_angle(b.theta - self.yaw()),
            ..*b
        }
    }

    /// Map a cuboid expressed in this frame back to world coordinates.
    pub fn cuboid_to_world(&self, b: &Cuboid) -> Cuboid {
        let [x, y, z] = self.to_world([b.cx, b.cy, b.cz]);
        Cuboid {
            cx: x,
            cy: y,
            cz: z,
            theta: normalize_angle(b.theta + self.yaw()),
            ..*b
        }
    }

    pub fn point_to_local(&self, p: &Point) -> Point {
        let [x, y, z] = self.to_local(p.xyz());
        Point::new(x, y, z, p.intensity)
    }

    pub fn point_to_world(&self, p: &Point) -> Point {
        let [x, y, z] = self.to_world(p.xyz());
        Point::new(x, y, z, p.intensity)
    }
}

/// Transform a cloud into the canonical frame of a cylinder or cuboid.
/// The input is left untouched.
pub fn canonicalize(cloud: &PointCloud, frame: impl Into<Frame>) -> PointCloud {
    let frame = frame.into();
    cloud.iter().map(|p| frame.point_to_local(p)).collect()
}

/// Inverse of [`canonicalize`].
pub fn decanonicalize(cloud: &PointCloud, frame: impl Into<Frame>) -> PointCloud {
    let frame = frame.into();
    cloud.iter().map(|p| frame.point_to_world(p)).collect()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

/// Sutherland–Hodgman clipping of `subject` by the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let s = input[(j + n - 1) % n];
            let e = input[j];
            let cs = cross(a, b, s);
            let ce = cross(a, b, e);
            if ce >= 0.0 {
                if cs < 0.0 {
                    output.push(lerp(s, e, cs / (cs - ce)));
                }
                output.push(e);
            } else if cs >= 0.0 {
                output.push(lerp(s, e, cs / (cs - ce)));
            }
        }
    }
    output
}

fn lerp(s: [f64; 2], e: [f64; 2], t: f64) -> [f64; 2] {
    [s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]
}

/// Area of the footprint intersection of two cuboids.
pub fn bev_intersection_area(a: &Cuboid, b: &Cuboid) -> f64 {
    // Cheap reject on circumscribed circles.
    let ra = 0.5 * (a.l.hypot(a.w));
    let rb = 0.5 * (b.l.hypot(b.w));
    if a.bev_center_distance(b.cx, b.cz) > ra + rb {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners())).max(0.0)
}

/// Intersection-over-union of the two oriented footprints on the (x, z)-plane.
pub fn bev_iou(a: &Cuboid, b: &Cuboid) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Length of the overlap between the vertical extents of two cuboids.
pub fn vertical_overlap(a: &Cuboid, b: &Cuboid) -> f64 {
    let (a0, a1) = a.y_range();
    let (b0, b1) = b.y_range();
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Volumetric intersection-over-union.
pub fn iou_3d(a: &Cuboid, b: &Cuboid) -> f64 {
    let dy = vertical_overlap(a, b);
    if dy <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}
