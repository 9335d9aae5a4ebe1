//! Cropping proposals and cuboids into fixed-size canonical feature blocks.

use bevclick_core::geometry::{points_in_cuboid, points_in_cylinder, Cuboid, CylinderProposal, Frame, PointCloud};
use bevclick_nn::Tensor;
use rand::Rng;

use crate::stage1::resample_indices;
use crate::DetectorError;

/// Column order of a block row.
pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;
pub const INTENSITY: usize = 3;
pub const FG: usize = 4;
pub const CHANNELS: usize = 5;

/// `n × 5` rows of canonical `(x, y, z, intensity, foreground)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub data: Tensor,
}

impl FeatureBlock {
    pub fn from_rows(rows: Vec<[f64; CHANNELS]>) -> Self {
        Self {
            data: Tensor::from_vec(rows.len(), CHANNELS, rows.into_iter().flatten().collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.data.rows
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows == 0
    }

    pub fn row(&self, i: usize) -> [f64; CHANNELS] {
        self.data.row(i).try_into().expect("block rows have five channels")
    }

    pub fn rows(&self) -> Vec<[f64; CHANNELS]> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| [self.data.get(i, X), self.data.get(i, Y), self.data.get(i, Z)]).collect()
    }

    /// Resample rows to exactly `n` (subset or repetition).
    pub fn resampled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        let idx = resample_indices(self.len(), n, rng);
        Self::from_rows(idx.into_iter().map(|i| self.row(i)).collect())
    }
}

fn block(cloud: &PointCloud, fg: &[f64], indices: &[usize], frame: &Frame) -> Result<FeatureBlock, DetectorError> {
    if indices.is_empty() {
        return Err(DetectorError::EmptyProposal);
    }
    let rows = indices
        .iter()
        .map(|&i| {
            let p = &cloud.points[i];
            let [x, y, z] = frame.to_local(p.xyz());
            [x, y, z, p.intensity, fg[i]]
        })
        .collect();
    Ok(FeatureBlock::from_rows(rows))
}

/// Every point inside the cylinder, in cloud order, translated so its axis
/// is the y-axis.
pub fn proposal_points(cloud: &PointCloud, fg: &[f64], prop: &CylinderProposal) -> Result<(FeatureBlock, Frame), DetectorError> {
    let frame = Frame::from(prop);
    Ok((block(cloud, fg, &points_in_cylinder(cloud, prop), &frame)?, frame))
}

/// Every point inside the cuboid grown by `margin`, in its own frame.
pub fn cuboid_points(cloud: &PointCloud, fg: &[f64], cuboid: &Cuboid, margin: f64) -> Result<(FeatureBlock, Frame), DetectorError> {
    let frame = Frame::from(cuboid);
    Ok((block(cloud, fg, &points_in_cuboid(cloud, cuboid, margin), &frame)?, frame))
}

/// [`proposal_points`] resampled to `num_points` rows.
pub fn crop_proposal<R: Rng + ?Sized>(
    cloud: &PointCloud,
    fg: &[f64],
    prop: &CylinderProposal,
    num_points: usize,
    rng: &mut R,
) -> Result<(FeatureBlock, Frame), DetectorError> {
    let (b, frame) = proposal_points(cloud, fg, prop)?;
    Ok((b.resampled(num_points, rng), frame))
}

/// [`cuboid_points`] resampled to `num_points` rows.
pub fn crop_cuboid<R: Rng + ?Sized>(
    cloud: &PointCloud,
    fg: &[f64],
    cuboid: &Cuboid,
    margin: f64,
    num_points: usize,
    rng: &mut R,
) -> Result<(FeatureBlock, Frame), DetectorError> {
    let (b, frame) = cuboid_points(cloud, fg, cuboid, margin)?;
    Ok((b.resampled(num_points, rng), frame))
}
