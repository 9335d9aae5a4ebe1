//! Point-network layers built on [`Graph`] ops.
//!
//! Layers work on a [`PointSet`]: one or more point clouds stored back to
//! back. Sampling and grouping respect segment boundaries while the shared
//! MLPs run over all segments in a single matrix product.

use std::ops::Range;

use crate::graph::{Graph, NodeId};
use crate::kernels::{ball_query_group, farthest_point_sample, three_nn};
use crate::param::{ParamId, ParamSet};
use crate::tensor::Tensor;
use crate::NnError;

/// Several point clouds concatenated; segment `i` spans
/// `offsets[i]..offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub coords: Vec<[f64; 3]>,
    pub offsets: Vec<usize>,
}

impl PointSet {
    pub fn single(coords: Vec<[f64; 3]>) -> Self {
        let n = coords.len();
        Self {
            coords,
            offsets: vec![0, n],
        }
    }

    pub fn batch(clouds: impl IntoIterator<Item = Vec<[f64; 3]>>) -> Self {
        let mut coords = Vec::new();
        let mut offsets = vec![0];
        for c in clouds {
            coords.extend(c);
            offsets.push(coords.len());
        }
        Self { coords, offsets }
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn range(&self, s: usize) -> Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn segment(&self, s: usize) -> &[[f64; 3]] {
        &self.coords[self.range(s)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    SaMultiScale,
    SaSingleScale,
    FeaturePropagation,
    FullyConnected,
}

/// Shape of one layer. For set abstraction, `widths[s]` is the MLP of scale
/// `s`; for the other kinds only `widths[0]` is used.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub group_size: usize,
    pub radii: Vec<f64>,
    pub caps: Vec<usize>,
    pub widths: Vec<Vec<usize>>,
}

impl LayerSpec {
    pub fn sa(group_size: usize, radii: &[f64], caps: &[usize], widths: &[&[usize]]) -> Self {
        Self {
            kind: if radii.len() > 1 {
                LayerKind::SaMultiScale
            } else {
                LayerKind::SaSingleScale
            },
            group_size,
            radii: radii.to_vec(),
            caps: caps.to_vec(),
            widths: widths.iter().map(|w| w.to_vec()).collect(),
        }
    }

    /// Single-scale layer pooling each whole segment around its origin.
    pub fn sa_global(widths: &[usize]) -> Self {
        Self::sa(1, &[f64::INFINITY], &[0], &[widths])
    }

    pub fn fp(widths: &[usize]) -> Self {
        Self {
            kind: LayerKind::FeaturePropagation,
            group_size: 0,
            radii: vec![],
            caps: vec![],
            widths: vec![widths.to_vec()],
        }
    }

    pub fn fc(widths: &[usize]) -> Self {
        Self {
            kind: LayerKind::FullyConnected,
            group_size: 0,
            radii: vec![],
            caps: vec![],
            widths: vec![widths.to_vec()],
        }
    }

    pub fn is_global(&self) -> bool {
        self.radii.first().is_some_and(|r| r.is_infinite())
    }

    pub fn validate(&self, name: &str) -> Result<(), NnError> {
        let bad = |why: &str| Err(NnError::Spec(format!("layer `{name}`: {why}")));
        if self.widths.is_empty() || self.widths.iter().any(|w| w.is_empty() || w.contains(&0)) {
            return bad("widths must be non-empty and positive");
        }
        match self.kind {
            LayerKind::SaMultiScale | LayerKind::SaSingleScale => {
                if self.group_size == 0 {
                    return bad("group size must be positive");
                }
                if self.radii.is_empty() || self.radii.len() != self.widths.len() {
                    return bad("one MLP per radius required");
                }
                if self.kind == LayerKind::SaSingleScale && self.radii.len() != 1 {
                    return bad("single-scale layer with several radii");
                }
                if self.radii.iter().any(|r| *r <= 0.0) || self.radii.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("radii must be positive and ascending");
                }
                if !self.is_global() && (self.caps.len() != self.radii.len() || self.caps.contains(&0)) {
                    return bad("one positive neighbor cap per radius required");
                }
            }
            LayerKind::FeaturePropagation | LayerKind::FullyConnected => {}
        }
        Ok(())
    }
}

/// Shared pointwise MLP: Linear layers with ReLU between them and,
/// optionally, after the last one.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    relu_last: bool,
    in_channels: usize,
    out_channels: usize,
}

impl Mlp {
    pub fn new(params: &mut ParamSet, name: &str, in_channels: usize, widths: &[usize], relu_last: bool) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            let last = i + 1 == widths.len();
            // A smaller head init keeps initial predictions near the prior.
            let gain = if last && !relu_last { 0.1 } else { 1.0 };
            let wid = params.add_weight_scaled(format!("{name}.{i}.w"), fan_in, w, gain);
            let bid = params.add_zeros(format!("{name}.{i}.b"), w);
            layers.push((wid, bid));
            fan_in = w;
        }
        Self {
            layers,
            relu_last,
            in_channels,
            out_channels: fan_in,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Bias of the final layer, e.g. to set an output prior.
    pub fn last_bias(&self) -> Option<ParamId> {
        self.layers.last().map(|l| l.1)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId, NnError> {
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = g.linear(h, *w, Some(*b))?;
            if i + 1 < self.layers.len() || self.relu_last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Sample, group, run a shared MLP and max-pool, once per radius.
#[derive(Debug, Clone)]
pub struct SetAbstraction {
    pub spec: LayerSpec,
    name: String,
    mlps: Vec<Mlp>,
}

impl SetAbstraction {
    pub fn new(params: &mut ParamSet, name: &str, spec: LayerSpec, in_channels: usize) -> Result<Self, NnError> {
        spec.validate(name)?;
        if !matches!(spec.kind, LayerKind::SaMultiScale | LayerKind::SaSingleScale) {
            return Err(NnError::Spec(format!("layer `{name}` is not a set abstraction")));
        }
        let mlps = spec
            .widths
            .iter()
            .enumerate()
            .map(|(s, w)| Mlp::new(params, &format!("{name}.s{s}"), 3 + in_channels, w, true))
            .collect();
        Ok(Self {
            spec,
            name: name.to_string(),
            mlps,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.mlps[0].in_channels() - 3
    }

    pub fn out_channels(&self) -> usize {
        self.mlps.iter().map(Mlp::out_channels).sum()
    }

    pub fn forward(&self, g: &mut Graph<'_>, points: &PointSet, feats: Option<NodeId>) -> Result<(PointSet, NodeId), NnError> {
        let want = self.in_channels();
        let have = feats.map_or(0, |f| g.value(f).cols);
        if have != want || feats.is_some_and(|f| g.value(f).rows != points.len()) {
            return Err(NnError::Shape(format!(
                "layer `{}` expects {} points x {want} channels, got {} x {have}",
                self.name,
                points.len(),
                feats.map_or(0, |f| g.value(f).rows)
            )));
        }
        if self.spec.is_global() {
            return self.forward_global(g, points, feats);
        }
        let k = self.spec.group_size;
        let mut centroids = Vec::with_capacity(k * points.num_segments());
        for s in 0..points.num_segments() {
            let seg = points.segment(s);
            for i in farthest_point_sample(seg, k, 0)? {
                centroids.push(seg[i]);
            }
        }
        let new_points = PointSet {
            coords: centroids,
            offsets: (0..=points.num_segments()).map(|s| s * k).collect(),
        };
        let mut outs = Vec::with_capacity(self.mlps.len());
        for (scale, mlp) in self.mlps.iter().enumerate() {
            let (r, cap) = (self.spec.radii[scale], self.spec.caps[scale]);
            let rows = new_points.len() * cap;
            let mut idx = Vec::with_capacity(rows);
            let mut rel = Vec::with_capacity(rows * 3);
            for s in 0..points.num_segments() {
                let base = points.offsets[s];
                let seg = points.segment(s);
                let cents = new_points.segment(s);
                for (c, group) in cents.iter().zip(ball_query_group(seg, cents, r, cap)) {
                    for j in 0..cap {
                        // Pad short groups with their first member; max
                        // pooling is unaffected by repeats.
                        let i = group.get(j).copied().unwrap_or(group[0]);
                        idx.push(base + i);
                        let p = seg[i];
                        rel.extend([(p[0] - c[0]) / r, (p[1] - c[1]) / r, (p[2] - c[2]) / r]);
                    }
                }
            }
            let rel = g.input(Tensor::from_vec(rows, 3, rel));
            let x = match feats {
                Some(f) => {
                    let gathered = g.gather(f, idx)?;
                    g.concat(&[rel, gathered])?
                }
                None => rel,
            };
            let h = mlp.forward(g, x)?;
            outs.push(g.group_max(h, cap)?);
        }
        let out = if outs.len() == 1 { outs[0] } else { g.concat(&outs)? };
        Ok((new_points, out))
    }

    fn forward_global(&self, g: &mut Graph<'_>, points: &PointSet, feats: Option<NodeId>) -> Result<(PointSet, NodeId), NnError> {
        let n = points.num_segments();
        let per = points.len() / n.max(1);
        if (0..n).any(|s| points.range(s).len() != per) || per == 0 {
            return Err(NnError::Shape(format!("layer `{}` needs equal, non-empty segments", self.name)));
        }
        let rel = g.input(Tensor::from_vec(points.len(), 3, points.coords.iter().flatten().copied().collect()));
        let x = match feats {
            Some(f) => g.concat(&[rel, f])?,
            None => rel,
        };
        let h = self.mlps[0].forward(g, x)?;
        let out = g.group_max(h, per)?;
        Ok((PointSet::batch((0..n).map(|_| vec![[0.0; 3]])), out))
    }
}

/// Interpolate coarse features onto finer points, concatenate skip
/// features and apply a pointwise MLP.
#[derive(Debug, Clone)]
pub struct FeaturePropagation {
    name: String,
    mlp: Mlp,
}

impl FeaturePropagation {
    pub fn new(params: &mut ParamSet, name: &str, spec: &LayerSpec, coarse_channels: usize, skip_channels: usize) -> Result<Self, NnError> {
        spec.validate(name)?;
        Ok(Self {
            name: name.to_string(),
            mlp: Mlp::new(params, name, coarse_channels + skip_channels, &spec.widths[0], true),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.mlp.out_channels()
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        fine: &PointSet,
        coarse: &PointSet,
        coarse_feats: NodeId,
        skip: Option<NodeId>,
    ) -> Result<NodeId, NnError> {
        if fine.num_segments() != coarse.num_segments() {
            return Err(NnError::Shape(format!("layer `{}`: segment counts differ", self.name)));
        }
        let mut idx = Vec::with_capacity(fine.len());
        let mut w = Vec::with_capacity(fine.len());
        for s in 0..fine.num_segments() {
            let base = coarse.offsets[s];
            let (ii, ww) = three_nn(fine.segment(s), coarse.segment(s))?;
            idx.extend(ii.into_iter().map(|t| t.map(|i| base + i)));
            w.extend(ww);
        }
        let interp = g.interpolate(coarse_feats, idx, w)?;
        let x = match skip {
            Some(sk) => g.concat(&[interp, sk])?,
            None => interp,
        };
        self.mlp.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sa_output_shape_and_identical_features() {
        let mut ps = ParamSet::new(3);
        let sa = SetAbstraction::new(&mut ps, "sa", LayerSpec::sa(4, &[0.5, 1.0], &[4, 8], &[&[8], &[8, 6]]), 2).unwrap();
        let coords: Vec<[f64; 3]> = (0..20).map(|i| [i as f64 * 0.1, 0.0, (i % 3) as f64 * 0.1]).collect();
        let pts = PointSet::batch([coords.clone(), coords]);
        let mut g = Graph::new(&ps);
        let f = g.input(Tensor::from_vec(40, 2, vec![0.5; 80]));
        let (np, out) = sa.forward(&mut g, &pts, Some(f)).unwrap();
        assert_eq!(np.offsets, vec![0, 4, 8]);
        assert_eq!(g.value(out).shape(), (8, 14));
        // Both segments are identical, so their pooled features are too.
        assert_eq!(g.value(out).data[..56], g.value(out).data[56..]);
    }

    #[test]
    fn sa_rejects_wrong_channels() {
        let mut ps = ParamSet::new(0);
        let sa = SetAbstraction::new(&mut ps, "sa1", LayerSpec::sa(2, &[1.0], &[4], &[&[4]]), 3).unwrap();
        let pts = PointSet::single(vec![[0.0; 3]; 5]);
        let mut g = Graph::new(&ps);
        let f = g.input(Tensor::zeros(5, 2));
        let err = sa.forward(&mut g, &pts, Some(f)).unwrap_err();
        assert!(err.to_string().contains("sa1"));
    }

    #[test]
    fn single_point_group_is_plain_mlp() {
        let mut ps = ParamSet::new(5);
        let sa = SetAbstraction::new(&mut ps, "sa", LayerSpec::sa(1, &[1.0], &[4], &[&[5, 3]]), 1).unwrap();
        let mlp_only = sa.mlps[0].clone();
        let pts = PointSet::single(vec![[0.3, 0.2, 0.1]]);
        let mut g = Graph::new(&ps);
        let f = g.input(Tensor::from_rows(&[[0.7]]));
        let (_, out) = sa.forward(&mut g, &pts, Some(f)).unwrap();
        let x = g.input(Tensor::from_rows(&[[0.0, 0.0, 0.0, 0.7]]));
        let direct = mlp_only.forward(&mut g, x).unwrap();
        assert_eq!(g.value(out).data, g.value(direct).data);
    }

    #[test]
    fn fp_single_coarse_point_broadcasts() {
        let mut ps = ParamSet::new(0);
        let fp = FeaturePropagation::new(&mut ps, "fp", &LayerSpec::fp(&[4]), 2, 0).unwrap();
        let fine = PointSet::single(vec![[1.0, 0.0, 0.0], [5.0, 1.0, 2.0]]);
        let coarse = PointSet::single(vec![[0.0; 3]]);
        let mut g = Graph::new(&ps);
        let cf = g.input(Tensor::from_rows(&[[0.3, -0.2]]));
        let out = fp.forward(&mut g, &fine, &coarse, cf, None).unwrap();
        let v = g.value(out);
        assert_eq!(v.row(0), v.row(1));
    }

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::sa(4, &[1.0, 0.5], &[4, 4], &[&[4], &[4]]).validate("x").is_err());
        assert!(LayerSpec::sa(4, &[0.5], &[4], &[&[0]]).validate("x").is_err());
        assert!(LayerSpec::sa_global(&[8]).validate("x").is_ok());
    }
}
