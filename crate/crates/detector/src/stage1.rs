//! Stage 1: per-point foreground scores and center votes.
//!
//! A PointNet++-style backbone (multi-scale set abstractions followed by
//! feature propagation back to the input points) feeds two pointwise heads:
//! a sigmoid foreground score and, per horizontal axis, bin logits plus
//! residuals locating the object center relative to the point.

use std::collections::HashMap;

use bevclick_core::geometry::{Point, PointCloud};
use bevclick_core::weak::{decode_center, CenterTarget};
use bevclick_nn::{FeaturePropagation, Graph, Mlp, NodeId, ParamSet, PointSet, SetAbstraction, Tensor};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::argmax;
use crate::config::Stage1Config;
use crate::DetectorError;

/// Prior foreground probability encoded in the initial seg-head bias.
const FG_PRIOR: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Stage1Net {
    sa: Vec<SetAbstraction>,
    fp: Vec<FeaturePropagation>,
    seg_head: Mlp,
    center_head: Mlp,
}

impl Stage1Net {
    pub fn new(params: &mut ParamSet, cfg: &Stage1Config) -> Result<Self, DetectorError> {
        let mut sa = Vec::with_capacity(cfg.sa.len());
        let mut channels = vec![cfg.in_features];
        for (i, spec) in cfg.sa.iter().enumerate() {
            let layer = SetAbstraction::new(params, &format!("s1.sa{i}"), spec.clone(), *channels.last().unwrap())?;
            channels.push(layer.out_channels());
            sa.push(layer);
        }
        if cfg.fp.len() != cfg.sa.len() {
            return Err(DetectorError::Config("stage 1 needs one FP layer per SA layer".into()));
        }
        let mut fp = Vec::with_capacity(cfg.fp.len());
        let mut coarse = *channels.last().unwrap();
        for (i, widths) in cfg.fp.iter().enumerate() {
            let skip = channels[channels.len() - 2 - i];
            let layer = FeaturePropagation::new(params, &format!("s1.fp{i}"), &bevclick_nn::LayerSpec::fp(widths), coarse, skip)?;
            coarse = layer.out_channels();
            fp.push(layer);
        }
        let seg_head = Mlp::new(params, "s1.seg", coarse, &[cfg.head_hidden, 1], false);
        let center_head = Mlp::new(params, "s1.center", coarse, &[cfg.head_hidden, cfg.center_outputs()], false);
        if let Some(b) = seg_head.last_bias() {
            params.get_mut(b).values[0] = (FG_PRIOR / (1.0 - FG_PRIOR)).ln();
        }
        Ok(Self {
            sa,
            fp,
            seg_head,
            center_head,
        })
    }

    /// Returns the foreground probabilities (`n × 1`, after the sigmoid)
    /// and the raw center-head outputs (`n × 4·bins`).
    pub fn forward(&self, g: &mut Graph<'_>, points: &PointSet, feats: NodeId) -> Result<(NodeId, NodeId), DetectorError> {
        let mut levels = vec![(points.clone(), feats)];
        for layer in &self.sa {
            let (pts, f) = levels.last().unwrap();
            let next = layer.forward(g, pts, Some(*f))?;
            levels.push(next);
        }
        let mut cur = levels.last().unwrap().1;
        for (i, layer) in self.fp.iter().enumerate() {
            let coarse = &levels[levels.len() - 1 - i].0;
            let (fine, skip) = &levels[levels.len() - 2 - i];
            cur = layer.forward(g, fine, coarse, cur, Some(*skip))?;
        }
        let logits = self.seg_head.forward(g, cur)?;
        let fg = g.sigmoid(logits);
        let center = self.center_head.forward(g, cur)?;
        Ok((fg, center))
    }
}

/// A stage-1 network with its parameters.
#[derive(Debug, Clone)]
pub struct Stage1Model {
    pub cfg: Stage1Config,
    pub params: ParamSet,
    pub net: Stage1Net,
}

impl Stage1Model {
    pub fn new(cfg: &Stage1Config, seed: u64) -> Result<Self, DetectorError> {
        let mut params = ParamSet::new(seed);
        let net = Stage1Net::new(&mut params, cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            net,
        })
    }
}

/// `k` indices into a cloud of `n` points: a uniform subset when `n ≥ k`,
/// otherwise every point once plus uniform repeats. Sorted.
pub fn resample_indices<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut idx = if n >= k {
        index::sample(rng, n, k).into_vec()
    } else {
        let mut v: Vec<usize> = (0..n).collect();
        v.extend((n..k).map(|_| rng.random_range(0..n)));
        v
    };
    idx.sort_unstable();
    idx
}

/// Input features per point: intensity and height.
pub fn point_features(points: &[Point]) -> Tensor {
    Tensor::from_vec(points.len(), 2, points.iter().flat_map(|p| [p.intensity, p.y]).collect())
}

/// Stage-1 outputs on the resampled points.
#[derive(Debug, Clone)]
pub struct Stage1Output {
    /// Source index into the scene cloud of every resampled point.
    pub indices: Vec<usize>,
    pub points: Vec<Point>,
    pub fg: Vec<f64>,
    /// `indices.len() × 4·bins` raw center-head outputs.
    pub center: Tensor,
    pub num_bins: usize,
}

impl Stage1Output {
    /// Decoded center target of resampled point `i`.
    pub fn center_target(&self, i: usize) -> CenterTarget {
        let nb = self.num_bins;
        let row = self.center.row(i);
        let bin_x = argmax(&row[..nb]);
        let bin_z = argmax(&row[2 * nb..3 * nb]);
        CenterTarget {
            bin_x,
            bin_z,
            res_x: row[nb + bin_x],
            res_z: row[3 * nb + bin_z],
        }
    }

    /// Center voted by resampled point `i`.
    pub fn vote(&self, i: usize, cfg: &Stage1Config) -> (f64, f64) {
        decode_center(&self.points[i], &self.center_target(i), &cfg.bins)
    }

    /// Foreground score for every point of the scene cloud: resampled
    /// points keep their own score, the rest take their nearest resampled
    /// neighbor's.
    pub fn scene_scores(&self, cloud: &PointCloud) -> Vec<f64> {
        let mut out = vec![f64::NAN; cloud.len()];
        for (&i, &f) in self.indices.iter().zip(&self.fg) {
            out[i] = f;
        }
        if out.iter().any(|v| v.is_nan()) {
            let grid = NearestGrid::new(&self.points);
            for (v, p) in out.iter_mut().zip(cloud.iter()) {
                if v.is_nan() {
                    *v = self.fg[grid.nearest(p)];
                }
            }
        }
        out
    }
}

/// Run stage 1 on a scene. The resampling is seeded by `seed`.
pub fn stage1_forward(model: &Stage1Model, cloud: &PointCloud, seed: u64) -> Result<Stage1Output, DetectorError> {
    if cloud.is_empty() {
        return Err(DetectorError::EmptyScene);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = resample_indices(cloud.len(), model.cfg.num_points, &mut rng);
    let points: Vec<Point> = indices.iter().map(|&i| cloud.points[i]).collect();
    let mut g = Graph::new(&model.params);
    let set = PointSet::single(points.iter().map(Point::xyz).collect());
    let feats = g.input(point_features(&points));
    let (fg, center) = model.net.forward(&mut g, &set, feats)?;
    Ok(Stage1Output {
        fg: g.value(fg).data.clone(),
        center: g.value(center).clone(),
        indices,
        points,
        num_bins: model.cfg.bins.num_bins,
    })
}

/// Horizontal hash grid for nearest-neighbor lookups.
struct NearestGrid<'a> {
    points: &'a [Point],
    cells: HashMap<(i64, i64), Vec<usize>>,
}

const CELL: f64 = 1.0;

fn cell_of(p: &Point) -> (i64, i64) {
    ((p.x / CELL).floor() as i64, (p.z / CELL).floor() as i64)
}

impl<'a> NearestGrid<'a> {
    fn new(points: &'a [Point]) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p)).or_default().push(i);
        }
        Self { points, cells }
    }

    /// Index of the nearest point in 3D; ties go to the lower index.
    fn nearest(&self, q: &Point) -> usize {
        if self.points.is_empty() {
            return 0;
        }
        let (cx, cz) = cell_of(q);
        let mut best: Option<(f64, usize)> = None;
        for ring in 0i64.. {
            // Points beyond the scanned rings are at least `(ring - 1) * CELL`
            // away horizontally.
            if let Some((d2, _)) = best {
                if ring > 0 && d2 < ((ring - 1) as f64 * CELL).powi(2) {
                    break;
                }
            }
            for dx in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs() != ring && dz.abs() != ring {
                        continue;
                    }
                    let Some(list) = self.cells.get(&(cx + dx, cz + dz)) else { continue };
                    for &i in list {
                        let p = &self.points[i];
                        let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2);
                        if best.is_none_or(|(bd, bi)| d2 < bd || (d2 == bd && i < bi)) {
                            best = Some((d2, i));
                        }
                    }
                }
            }
        }
        best.map_or(0, |(_, i)| i)
    }
}
