//! KITTI file formats and the click-annotation format.
//!
//! - velodyne `.bin`: packed little-endian `f32` quadruples `(x, y, z, r)`.
//! - `label_2/*.txt`: 15 whitespace-separated fields per object, plus an
//!   optional trailing score for detector output.
//! - `calib/*.txt`: `KEY: v0 v1 ...` rows holding `P0..P3`, `R0_rect`,
//!   `Tr_velo_to_cam` and optionally `Tr_imu_to_velo`.
//! - clicks: one `class x z` row per annotated object, meters on the
//!   (x, z)-plane of the rectified camera frame.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Cuboid, GeometryError, Point, PointCloud};

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("malformed velodyne blob: {len} bytes, trailing record starts at byte offset {offset}")]
    MalformedBlob { len: usize, offset: usize },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("calibration: {0}")]
    Calib(String),
    #[error("label cannot become a cuboid: {0}")]
    NotABox(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = KittiError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> KittiError + '_ {
    move |source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> KittiError {
    KittiError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

/// Decode a velodyne scan. Points stay in the sensor frame.
pub fn parse_velodyne(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % 16 != 0 {
        return Err(KittiError::MalformedBlob {
            len: bytes.len(),
            offset: bytes.len() - bytes.len() % 16,
        });
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes([c[4 * k], c[4 * k + 1], c[4 * k + 2], c[4 * k + 3]]) as f64;
            Point::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Encode a scan as packed `f32` quadruples.
pub fn write_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.iter() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

type Mat34 = [[f64; 4]; 3];
type Mat33 = [[f64; 3]; 3];

/// Sensor calibration for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibRecord {
    /// Camera projections `P0..P3`; `P2` is the left color camera.
    pub projections: [Mat34; 4],
    pub r0_rect: Mat33,
    pub velo_to_cam: Mat34,
    pub imu_to_velo: Option<Mat34>,
}

const IDENTITY34: Mat34 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
const IDENTITY33: Mat33 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl CalibRecord {
    /// All-identity calibration; velodyne coordinates pass through unchanged.
    pub fn identity() -> Self {
        Self {
            projections: [IDENTITY34; 4],
            r0_rect: IDENTITY33,
            velo_to_cam: IDENTITY34,
            imu_to_velo: None,
        }
    }

    /// Camera-aligned calibration used for synthetic scenes: the sensor sits
    /// at the camera origin, velodyne axes (forward, left, up) map onto
    /// (z, -x, -y), and `P2` is a pinhole with KITTI-like intrinsics.
    pub fn synthetic() -> Self {
        let (f, cu, cv) = (721.5377, 609.5593, 172.854);
        let p2 = [[f, 0.0, cu, 0.0], [0.0, f, cv, 0.0], [0.0, 0.0, 1.0, 0.0]];
        Self {
            projections: [p2; 4],
            r0_rect: IDENTITY33,
            velo_to_cam: [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]],
            imu_to_velo: None,
        }
    }

    pub fn p2(&self) -> &Mat34 {
        &self.projections[2]
    }

    /// The combined `R0_rect * Tr_velo_to_cam` as a 3x4 matrix.
    pub fn velo_to_rect(&self) -> Mat34 {
        let mut out = [[0.0; 4]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.r0_rect[i][k] * self.velo_to_cam[k][j]).sum();
            }
        }
        out
    }

    /// Inverse of [`velo_to_rect`](Self::velo_to_rect), assuming the rotation
    /// block is orthonormal.
    pub fn rect_to_velo(&self) -> Mat34 {
        let m = self.velo_to_rect();
        let mut out = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[j][i];
            }
            out[i][3] = -(0..3).map(|k| m[k][i] * m[k][3]).sum::<f64>();
        }
        out
    }

    /// Parse a KITTI calibration file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut calib = Self::identity();
        let mut seen_p = [false; 4];
        let mut seen_r0 = false;
        let mut seen_tr = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| malformed(line_no, "expected `KEY: values`"))?;
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| malformed(line_no, format!("non-numeric value `{t}`"))))
                .collect::<Result<_>>()?;
            let want = |n: usize| {
                if values.len() == n {
                    Ok(())
                } else {
                    Err(malformed(line_no, format!("{key} needs {n} values, got {}", values.len())))
                }
            };
            match key.trim() {
                k @ ("P0" | "P1" | "P2" | "P3") => {
                    want(12)?;
                    let idx = (k.as_bytes()[1] - b'0') as usize;
                    calib.projections[idx] = to34(&values);
                    seen_p[idx] = true;
                }
                "R0_rect" | "R_rect" => {
                    want(9)?;
                    calib.r0_rect = to33(&values);
                    seen_r0 = true;
                }
                "Tr_velo_to_cam" | "Tr_velo_cam" => {
                    want(12)?;
                    calib.velo_to_cam = to34(&values);
                    seen_tr = true;
                }
                "Tr_imu_to_velo" | "Tr_imu_velo" => {
                    want(12)?;
                    calib.imu_to_velo = Some(to34(&values));
                }
                _ => {}
            }
        }
        if !seen_p[2] || !seen_r0 || !seen_tr {
            return Err(KittiError::Calib("missing one of P2, R0_rect, Tr_velo_to_cam".into()));
        }
        calib.check_orthonormal(1e-3)?;
        Ok(calib)
    }

    fn check_orthonormal(&self, tol: f64) -> Result<()> {
        let r0 = self.r0_rect;
        let tr: Mat33 = std::array::from_fn(|i| std::array::from_fn(|j| self.velo_to_cam[i][j]));
        for (name, m) in [("R0_rect", r0), ("Tr_velo_to_cam", tr)] {
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    if (dot - expect).abs() > tol {
                        return Err(KittiError::Calib(format!("{name} rotation block is not orthonormal")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Serialize in KITTI's `%.12e` layout.
    pub fn write(&self) -> String {
        let mut out = String::new();
        for (i, p) in self.projections.iter().enumerate() {
            write_row(&mut out, &format!("P{i}"), p.iter().flatten());
        }
        write_row(&mut out, "R0_rect", self.r0_rect.iter().flatten());
        write_row(&mut out, "Tr_velo_to_cam", self.velo_to_cam.iter().flatten());
        if let Some(m) = &self.imu_to_velo {
            write_row(&mut out, "Tr_imu_to_velo", m.iter().flatten());
        }
        out
    }

    /// Project a rectified-frame point into image pixels; `None` when it
    /// is not in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let m = self.p2();
        let h: [f64; 3] = std::array::from_fn(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3]);
        if h[2] <= 1e-6 {
            None
        } else {
            Some((h[0] / h[2], h[1] / h[2]))
        }
    }
}

fn to34(v: &[f64]) -> Mat34 {
    std::array::from_fn(|i| std::array::from_fn(|j| v[4 * i + j]))
}

fn to33(v: &[f64]) -> Mat33 {
    std::array::from_fn(|i| std::array::from_fn(|j| v[3 * i + j]))
}

fn write_row<'a>(out: &mut String, key: &str, values: impl Iterator<Item = &'a f64>) {
    out.push_str(key);
    out.push(':');
    for v in values {
        out.push(' ');
        out.push_str(&c_sci(*v, 12));
    }
    out.push('\n');
}

/// Format like C's `%.{prec}e`: two-digit signed exponent.
fn c_sci(v: f64, prec: usize) -> String {
    let s = format!("{v:.prec$e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

/// Apply `R0_rect * Tr_velo_to_cam` to every point; intensities are kept.
pub fn transform_to_internal(cloud: &PointCloud, calib: &CalibRecord) -> PointCloud {
    apply34(cloud, &calib.velo_to_rect())
}

/// Inverse of [`transform_to_internal`].
pub fn transform_to_velodyne(cloud: &PointCloud, calib: &CalibRecord) -> PointCloud {
    apply34(cloud, &calib.rect_to_velo())
}

fn apply34(cloud: &PointCloud, m: &Mat34) -> PointCloud {
    cloud
        .iter()
        .map(|p| {
            let t = |i: usize| m[i][0] * p.x + m[i][1] * p.y + m[i][2] * p.z + m[i][3];
            Point::new(t(0), t(1), t(2), p.intensity)
        })
        .collect()
}

/// One object row of a KITTI label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub class: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// left, top, right, bottom in pixels.
    pub bbox: [f64; 4],
    /// h, w, l in meters.
    pub dims: [f64; 3],
    /// Bottom-face center in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.class == "DontCare"
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    /// Lift to a center-of-volume cuboid: `cy = y - h/2`.
    pub fn to_cuboid(&self) -> Result<Cuboid> {
        let [h, w, l] = self.dims;
        let [x, y, z] = self.location;
        Ok(Cuboid::new(x, y - 0.5 * h, z, h, w, l, self.rotation_y)?)
    }

    /// Build a detector-output record for `cuboid`: the 2D box is the
    /// clamped image-plane hull of the projected corners, or `-1` in all four
    /// fields when the box is not in front of the camera.
    pub fn from_cuboid(class: &str, cuboid: &Cuboid, score: Option<f64>, calib: &CalibRecord) -> Self {
        const IMAGE_W: f64 = 1242.0;
        const IMAGE_H: f64 = 375.0;
        let projected: Option<Vec<(f64, f64)>> = cuboid.corners().iter().map(|c| calib.project(*c)).collect();
        let bbox = projected
            .and_then(|pts| {
                let (mut l, mut t, mut r, mut b) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (u, v) in pts {
                    l = l.min(u);
                    t = t.min(v);
                    r = r.max(u);
                    b = b.max(v);
                }
                let (l, t) = (l.clamp(0.0, IMAGE_W - 1.0), t.clamp(0.0, IMAGE_H - 1.0));
                let (r, b) = (r.clamp(0.0, IMAGE_W - 1.0), b.clamp(0.0, IMAGE_H - 1.0));
                (r > l && b > t).then_some([l, t, r, b])
            })
            .unwrap_or([-1.0; 4]);
        let alpha = normalize_angle(cuboid.theta - cuboid.cx.atan2(cuboid.cz));
        Self {
            class: class.to_string(),
            truncation: 0.0,
            occlusion: 0,
            alpha,
            bbox,
            dims: [cuboid.h, cuboid.w, cuboid.l],
            location: [cuboid.cx, cuboid.cy + 0.5 * cuboid.h, cuboid.cz],
            rotation_y: cuboid.theta,
            score,
        }
    }

    fn write_into(&self, out: &mut String, decimals: usize) {
        if self.is_dont_care() {
            // DontCare rows carry integer sentinels (`-1 -1 -10 ... -1000 -10`).
            let short = |v: f64| format_score(v);
            let _ = write!(out, "{} {} {} {}", self.class, short(self.truncation), self.occlusion, short(self.alpha));
            for v in self.bbox {
                let _ = write!(out, " {v:.2}");
            }
            for v in self.dims.iter().chain(&self.location).chain([&self.rotation_y]) {
                let _ = write!(out, " {}", short(*v));
            }
            out.push('\n');
            return;
        }
        let d = decimals;
        let _ = write!(out, "{} {:.2} {} {:.d$}", self.class, self.truncation, self.occlusion, self.alpha);
        for v in self.bbox {
            let _ = write!(out, " {v:.2}");
        }
        for v in self.dims.iter().chain(&self.location).chain([&self.rotation_y]) {
            let _ = write!(out, " {v:.d$}");
        }
        if let Some(s) = self.score {
            out.push(' ');
            out.push_str(&format_score(s));
        }
        out.push('\n');
    }
}

/// Shortest fixed-point rendering with at most six decimals.
fn format_score(s: f64) -> String {
    let txt = format!("{s:.6}");
    let txt = txt.trim_end_matches('0');
    let txt = txt.strip_suffix('.').unwrap_or(txt);
    if txt == "-0" {
        "0".to_string()
    } else {
        txt.to_string()
    }
}

/// Parse a label file (15 fields per line, or 16 with a score).
pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(malformed(line_no, format!("expected 15 or 16 fields, got {}", fields.len())));
        }
        let num = |k: usize| {
            fields[k]
                .parse::<f64>()
                .map_err(|_| malformed(line_no, format!("field {} (`{}`) is not a number", k + 1, fields[k])))
        };
        let occlusion = fields[2]
            .parse::<i32>()
            .map_err(|_| malformed(line_no, format!("occlusion `{}` is not an integer", fields[2])))?;
        out.push(LabelRecord {
            class: fields[0].to_string(),
            truncation: num(1)?,
            occlusion,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dims: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

/// Serialize label records in KITTI's two-decimal layout.
pub fn write_labels(records: &[LabelRecord]) -> String {
    write_labels_with(records, 2)
}

/// Serialize label records, printing angles, sizes and locations with
/// `decimals` digits. Pixel boxes and truncation always use two.
pub fn write_labels_with(records: &[LabelRecord], decimals: usize) -> String {
    let mut out = String::new();
    for r in records {
        r.write_into(&mut out, decimals);
    }
    out
}

/// Detector output as KITTI label text, score in field 16. Geometry is
/// printed with four decimals so the file round-trips to sub-millimeter.
pub fn write_predictions(class: &str, predictions: &[(Cuboid, f64)], calib: &CalibRecord) -> String {
    let records: Vec<LabelRecord> = predictions
        .iter()
        .map(|(c, s)| LabelRecord::from_cuboid(class, c, Some(*s), calib))
        .collect();
    write_labels_with(&records, 4)
}

/// A click: object class plus its horizontal center. The height is
/// implicitly the sensor height (`y = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickAnnotation {
    pub class: String,
    pub x: f64,
    pub z: f64,
}

impl ClickAnnotation {
    pub fn new(class: impl Into<String>, x: f64, z: f64) -> Self {
        Self {
            class: class.into(),
            x,
            z,
        }
    }

    /// Always zero.
    pub fn y(&self) -> f64 {
        0.0
    }
}

pub fn read_clicks(text: &str) -> Result<Vec<ClickAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with('#') {
            continue;
        }
        if fields.len() != 3 {
            return Err(malformed(line_no, format!("expected `class x z`, got {} fields", fields.len())));
        }
        let num = |k: usize| {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(line_no, format!("`{}` is not a finite number", fields[k])))
        };
        out.push(ClickAnnotation::new(fields[0], num(1)?, num(2)?));
    }
    Ok(out)
}

pub fn write_clicks(clicks: &[ClickAnnotation]) -> String {
    let mut out = String::new();
    for c in clicks {
        let _ = writeln!(out, "{} {:.3} {:.3}", c.class, c.x, c.z);
    }
    out
}

/// A KITTI-style directory tree:
/// `velodyne/`, `label_2/`, `calib/` and this crate's `clicks/`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
}

/// One scene loaded into the internal frame.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub cloud: PointCloud,
    pub calib: CalibRecord,
    pub labels: Vec<LabelRecord>,
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn velodyne_path(&self, id: &str) -> PathBuf {
        self.root.join("velodyne").join(format!("{id}.bin"))
    }

    pub fn label_path(&self, id: &str) -> PathBuf {
        self.root.join("label_2").join(format!("{id}.txt"))
    }

    pub fn calib_path(&self, id: &str) -> PathBuf {
        self.root.join("calib").join(format!("{id}.txt"))
    }

    pub fn clicks_path(&self, id: &str) -> PathBuf {
        self.root.join("clicks").join(format!("{id}.txt"))
    }

    /// Scene ids found under `velodyne/`, sorted.
    pub fn scene_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("velodyne");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension().is_some_and(|x| x == "bin"))
                    .then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                    .flatten()
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn load_calib(&self, id: &str) -> Result<CalibRecord> {
        CalibRecord::parse(&read_text(&self.calib_path(id))?)
    }

    /// Labels for a scene; a missing label file means no objects.
    pub fn load_labels(&self, id: &str) -> Result<Vec<LabelRecord>> {
        let path = self.label_path(id);
        if !path.exists() {
            return Ok(Vec::new());
        }
        parse_labels(&read_text(&path)?)
    }

    /// Clicks for a scene; a missing clicks file means no clicks.
    pub fn load_clicks(&self, id: &str) -> Result<Vec<ClickAnnotation>> {
        let path = self.clicks_path(id);
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_clicks(&read_text(&path)?)
    }

    pub fn load_scene(&self, id: &str) -> Result<Scene> {
        let path = self.velodyne_path(id);
        let raw = parse_velodyne(&fs::read(&path).map_err(io_err(&path))?)?;
        let calib = self.load_calib(id)?;
        Ok(Scene {
            id: id.to_string(),
            cloud: transform_to_internal(&raw, &calib),
            labels: self.load_labels(id)?,
            calib,
        })
    }

    /// Write a scene given in the internal frame.
    pub fn write_scene(&self, id: &str, cloud: &PointCloud, calib: &CalibRecord, labels: &[LabelRecord]) -> Result<()> {
        let velo = transform_to_velodyne(cloud, calib);
        write_file(&self.velodyne_path(id), &write_velodyne(&velo))?;
        write_file(&self.calib_path(id), calib.write().as_bytes())?;
        write_file(&self.label_path(id), write_labels(labels).as_bytes())
    }

    pub fn write_clicks(&self, id: &str, clicks: &[ClickAnnotation]) -> Result<()> {
        write_file(&self.clicks_path(id), write_clicks(clicks).as_bytes())
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Create parent directories and write `bytes`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR: &str = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

    #[test]
    fn velodyne_single_point() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = parse_velodyne(&bytes).unwrap();
        assert_eq!(cloud.points, vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
        assert!(parse_velodyne(&[]).unwrap().is_empty());
        match parse_velodyne(&[0u8; 17]) {
            Err(KittiError::MalformedBlob { len: 17, offset: 16 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_fields_and_cuboid() {
        let recs = parse_labels(CAR).unwrap();
        let r = &recs[0];
        assert_eq!(r.class, "Car");
        assert_eq!(r.dims, [1.65, 1.67, 3.64]);
        assert_eq!(r.location, [-0.65, 1.71, 46.70]);
        assert_eq!(r.rotation_y, -1.59);
        let c = r.to_cuboid().unwrap();
        assert!((c.cy - 0.885).abs() < 1e-12);
        assert_eq!(c.theta, -1.59);
        assert_eq!(write_labels(&recs), format!("{CAR}\n"));
    }

    #[test]
    fn dont_care_is_kept() {
        let recs = parse_labels("DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n").unwrap();
        assert!(recs[0].is_dont_care());
        assert!(recs[0].to_cuboid().is_err());
    }

    #[test]
    fn wrong_field_count_names_line() {
        let text = format!("{CAR}\nCar 0.0 0\n");
        match parse_labels(&text) {
            Err(KittiError::MalformedLine { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clicks_format() {
        let c = read_clicks("Car 12.500 34.250\n").unwrap();
        assert_eq!(c, vec![ClickAnnotation::new("Car", 12.5, 34.25)]);
        match read_clicks("Car twelve 3") {
            Err(KittiError::MalformedLine { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(write_clicks(&c), "Car 12.500 34.250\n");
    }

    #[test]
    fn prediction_fields() {
        let calib = CalibRecord::synthetic();
        let c = Cuboid::new(1.0, 0.9, 15.0, 1.5, 1.6, 3.9, 0.2).unwrap();
        let text = write_predictions("Car", &[(c, 0.87)], &calib);
        assert!(text.trim_end().ends_with(" 0.87"), "{text}");
        let back = parse_labels(&text).unwrap()[0].to_cuboid().unwrap();
        for (a, b) in [(back.cx, c.cx), (back.cy, c.cy), (back.cz, c.cz), (back.h, c.h), (back.theta, c.theta)] {
            assert!((a - b).abs() < 1e-3);
        }

        let behind = Cuboid::new(0.0, 0.9, -10.0, 1.5, 1.6, 3.9, 0.0).unwrap();
        let rec = LabelRecord::from_cuboid("Car", &behind, Some(0.5), &calib);
        assert_eq!(rec.bbox, [-1.0; 4]);
    }

    #[test]
    fn alpha_matches_kitti_example() {
        let r = &parse_labels(CAR).unwrap()[0];
        let rec = LabelRecord::from_cuboid("Car", &r.to_cuboid().unwrap(), None, &CalibRecord::synthetic());
        assert!((rec.alpha - r.alpha).abs() < 0.01);
    }

    #[test]
    fn calib_identity_and_translation() {
        let calib = CalibRecord::identity();
        let cloud = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.4)]);
        assert_eq!(transform_to_internal(&cloud, &calib), cloud);
        let mut shifted = CalibRecord::identity();
        shifted.velo_to_cam[2][3] = 1.0;
        assert_eq!(transform_to_internal(&cloud, &shifted).points[0], Point::new(1.0, 2.0, 4.0, 0.4));
    }

    #[test]
    fn calib_write_parse_roundtrip() {
        let calib = CalibRecord::synthetic();
        let text = calib.write();
        assert!(text.contains("P2: 7.215377000000e+02"));
        let back = CalibRecord::parse(&text).unwrap();
        assert_eq!(back, calib);
        assert_eq!(back.write(), text);
    }

    #[test]
    fn calib_rejects_skewed_rotation() {
        let mut calib = CalibRecord::synthetic();
        calib.r0_rect[0][0] = 1.1;
        assert!(matches!(CalibRecord::parse(&calib.write()), Err(KittiError::Calib(_))));
    }

    #[test]
    fn c_sci_matches_printf() {
        assert_eq!(c_sci(721.5377, 12), "7.215377000000e+02");
        assert_eq!(c_sci(-0.0004069766, 6), "-4.069766e-04");
        assert_eq!(c_sci(0.0, 3), "0.000e+00");
    }
}
