//! Bird's-eye-view rasters of a scene and their pixel/world mapping.
//!
//! Pixel `u` grows with world `x`; pixel `v` grows toward the sensor, so the
//! far edge of the window is row 0. Cell `(i, j)` covers
//! `u ∈ [i, i + 1)`, `v ∈ [j, j + 1)` and its center sits at `(i + 0.5, j + 0.5)`.

use bevclick_core::PointCloud;
use serde::Serialize;

/// World window and resolution of a raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BevWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub meters_per_pixel: f64,
}

impl Default for BevWindow {
    fn default() -> Self {
        Self {
            x_min: -40.0,
            x_max: 40.0,
            z_min: 0.0,
            z_max: 70.4,
            meters_per_pixel: 0.1,
        }
    }
}

impl BevWindow {
    pub fn width(&self) -> usize {
        ((self.x_max - self.x_min) / self.meters_per_pixel).round() as usize
    }

    pub fn height(&self) -> usize {
        ((self.z_max - self.z_min) / self.meters_per_pixel).round() as usize
    }

    /// Continuous pixel coordinates of a world point.
    pub fn world_to_pixel(&self, x: f64, z: f64) -> (f64, f64) {
        ((x - self.x_min) / self.meters_per_pixel, (self.z_max - z) / self.meters_per_pixel)
    }

    /// Inverse of [`world_to_pixel`](Self::world_to_pixel).
    pub fn pixel_to_world(&self, u: f64, v: f64) -> (f64, f64) {
        (self.x_min + u * self.meters_per_pixel, self.z_max - v * self.meters_per_pixel)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.z_min..self.z_max).contains(&z)
    }

    /// Cell holding a world point, if it lies inside the window.
    pub fn cell(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        if !self.contains(x, z) {
            return None;
        }
        let (u, v) = self.world_to_pixel(x, z);
        // Rounding can land a point on the far boundary; keep it in range.
        Some(((u.floor() as usize).min(self.width() - 1), (v.floor() as usize).min(self.height() - 1)))
    }

    /// World position of a cell center.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        self.pixel_to_world(i as f64 + 0.5, j as f64 + 0.5)
    }
}

/// Heights are measured upward from `ground_y`, starting `below` meters
/// under it and saturating after `span` meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeightScale {
    pub ground_y: f64,
    pub below: f64,
    pub span: f64,
}

impl Default for HeightScale {
    fn default() -> Self {
        Self {
            ground_y: 1.73,
            below: 0.3,
            span: 4.0,
        }
    }
}

impl HeightScale {
    /// Normalized height of a point with vertical coordinate `y` (y down).
    pub fn normalize(&self, y: f64) -> f64 {
        ((self.ground_y + self.below - y) / self.span).clamp(0.0, 1.0)
    }
}

/// Row-major `height × width` channels, each in `[0, 1]`; empty cells are 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BevRaster {
    pub width: usize,
    pub height: usize,
    pub window: BevWindow,
    pub scale: HeightScale,
    /// Maximum normalized point height per cell.
    pub max_height: Vec<f32>,
    /// Point count per cell divided by the largest count.
    pub density: Vec<f32>,
}

pub fn rasterize_bev(cloud: &PointCloud, window: BevWindow, scale: HeightScale) -> BevRaster {
    let (width, height) = (window.width(), window.height());
    let mut max_height = vec![0.0f32; width * height];
    let mut counts = vec![0u32; width * height];
    for p in cloud.iter() {
        if let Some((i, j)) = window.cell(p.x, p.z) {
            let k = j * width + i;
            counts[k] += 1;
            max_height[k] = max_height[k].max(scale.normalize(p.y) as f32);
        }
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f32;
    BevRaster {
        width,
        height,
        window,
        scale,
        max_height,
        density: counts.iter().map(|&c| c as f32 / top).collect(),
    }
}

impl BevRaster {
    pub fn at(&self, i: usize, j: usize) -> (f32, f32) {
        let k = j * self.width + i;
        (self.max_height[k], self.density[k])
    }

    /// Red carries height, green carries density.
    pub fn to_png(&self) -> Result<Vec<u8>, image::ImageError> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (k, px) in img.pixels_mut().enumerate() {
            let q = |v: f32| (v * 255.0).round() as u8;
            *px = image::Rgb([q(self.max_height[k]), q(self.density[k]), 0]);
        }
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}
