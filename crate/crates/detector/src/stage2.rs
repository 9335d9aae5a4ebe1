//! Stage 2: cuboid generation from a cylinder crop, then refinement and
//! confidence from a crop around the generated cuboid.
//!
//! Both networks share one shape: single-scale set abstractions, a global
//! pooling layer producing the trunk feature, and two heads (box parameters
//! and a sigmoid confidence).

use bevclick_core::geometry::{Cuboid, CylinderProposal, Frame, PointCloud};
use bevclick_nn::{Graph, Mlp, NodeId, ParamSet, PointSet, SetAbstraction, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::BoxCodec;
use crate::config::Stage2Config;
use crate::crop::{crop_cuboid, crop_proposal, FeatureBlock, CHANNELS};
use crate::DetectorError;

/// Blocks per forward pass at inference.
const CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct Stage2Net {
    sa: Vec<SetAbstraction>,
    box_head: Mlp,
    conf_head: Mlp,
}

impl Stage2Net {
    pub fn new(params: &mut ParamSet, prefix: &str, cfg: &Stage2Config, box_outputs: usize) -> Result<Self, DetectorError> {
        let mut sa = Vec::with_capacity(cfg.sa.len());
        let mut channels = cfg.in_features;
        for (i, spec) in cfg.sa.iter().enumerate() {
            let layer = SetAbstraction::new(params, &format!("{prefix}.sa{i}"), spec.clone(), channels)?;
            channels = layer.out_channels();
            sa.push(layer);
        }
        if !cfg.sa.last().is_some_and(|s| s.is_global()) {
            return Err(DetectorError::Config("stage 2 must end with a global set abstraction".into()));
        }
        let box_head = Mlp::new(params, &format!("{prefix}.box"), channels, &[cfg.head_hidden, box_outputs], false);
        let conf_head = Mlp::new(params, &format!("{prefix}.conf"), channels, &[cfg.head_hidden, 1], false);
        Ok(Self { sa, box_head, conf_head })
    }

    /// Box rows (`B × outputs`) and confidences (`B × 1`, after the sigmoid).
    pub fn forward(&self, g: &mut Graph<'_>, blocks: &[&FeatureBlock]) -> Result<(NodeId, NodeId), DetectorError> {
        let mut pts = PointSet::batch(blocks.iter().map(|b| b.coords()));
        let rows: usize = blocks.iter().map(|b| b.len()).sum();
        let mut data = Vec::with_capacity(rows * CHANNELS);
        for b in blocks {
            data.extend_from_slice(&b.data.data);
        }
        let mut feats = g.input(Tensor::from_vec(rows, CHANNELS, data));
        for layer in &self.sa {
            let (p, f) = layer.forward(g, &pts, Some(feats))?;
            pts = p;
            feats = f;
        }
        let boxes = self.box_head.forward(g, feats)?;
        let logit = self.conf_head.forward(g, feats)?;
        let conf = g.sigmoid(logit);
        Ok((boxes, conf))
    }
}

/// A stage-2 network with its parameters.
#[derive(Debug, Clone)]
pub struct Stage2Model {
    pub params: ParamSet,
    pub net: Stage2Net,
}

impl Stage2Model {
    pub fn new(prefix: &str, cfg: &Stage2Config, codec: &BoxCodec, seed: u64) -> Result<Self, DetectorError> {
        let mut params = ParamSet::new(seed);
        let net = Stage2Net::new(&mut params, prefix, cfg, codec.outputs())?;
        Ok(Self { params, net })
    }

    /// Raw box rows and confidences for each block.
    pub fn predict(&self, blocks: &[&FeatureBlock]) -> Result<Vec<(Vec<f64>, f64)>, DetectorError> {
        let mut out = Vec::with_capacity(blocks.len());
        for chunk in blocks.chunks(CHUNK) {
            let mut g = Graph::new(&self.params);
            let (b, c) = self.net.forward(&mut g, chunk)?;
            let (bv, cv) = (g.value(b), g.value(c));
            out.extend((0..chunk.len()).map(|i| (bv.row(i).to_vec(), cv.data[i])));
        }
        Ok(out)
    }
}

/// The initial and refinement networks.
#[derive(Debug, Clone)]
pub struct Stage2Models {
    pub cfg: Stage2Config,
    pub codec: BoxCodec,
    pub initial: Stage2Model,
    pub refine: Stage2Model,
}

impl Stage2Models {
    pub fn new(cfg: &Stage2Config, codec: BoxCodec, seed: u64) -> Result<Self, DetectorError> {
        Ok(Self {
            cfg: cfg.clone(),
            codec,
            initial: Stage2Model::new("s2i", cfg, &codec, seed)?,
            refine: Stage2Model::new("s2r", cfg, &codec, seed.wrapping_add(1))?,
        })
    }
}

/// World-frame result of the two stage-2 steps for one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Prediction {
    pub initial: Cuboid,
    pub cuboid: Cuboid,
    pub confidence: f64,
}

/// Decode a box row predicted in `frame` and move it to the world.
pub fn decode_world(codec: &BoxCodec, row: &[f64], frame: &Frame) -> Cuboid {
    frame.cuboid_to_world(&codec.decode(row))
}

/// Run both stage-2 networks on a set of proposals. Crops are seeded by
/// `seed` and the proposal index. Proposals whose cylinder or generated
/// cuboid holds no points yield `None`.
pub fn stage2_predict_batch(
    models: &Stage2Models,
    cloud: &PointCloud,
    fg: &[f64],
    props: &[CylinderProposal],
    seed: u64,
) -> Result<Vec<Option<Stage2Prediction>>, DetectorError> {
    let n = models.cfg.num_points;
    let mut first = Vec::with_capacity(props.len());
    for (k, p) in props.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 20));
        first.push(match crop_proposal(cloud, fg, p, n, &mut rng) {
            Ok(c) => Some(c),
            Err(DetectorError::EmptyProposal) => None,
            Err(e) => return Err(e),
        });
    }
    let live: Vec<usize> = (0..props.len()).filter(|&k| first[k].is_some()).collect();
    let blocks: Vec<&FeatureBlock> = live.iter().map(|&k| &first[k].as_ref().unwrap().0).collect();
    let init = models.initial.predict(&blocks)?;
    let mut second: Vec<Option<(Cuboid, FeatureBlock, Frame)>> = vec![None; props.len()];
    for (&k, (row, _)) in live.iter().zip(&init) {
        let cuboid = decode_world(&models.codec, row, &first[k].as_ref().unwrap().1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 20) ^ 1);
        match crop_cuboid(cloud, fg, &cuboid, models.cfg.crop_margin, n, &mut rng) {
            Ok((b, f)) => second[k] = Some((cuboid, b, f)),
            Err(DetectorError::EmptyProposal) => {}
            Err(e) => return Err(e),
        }
    }
    let live: Vec<usize> = (0..props.len()).filter(|&k| second[k].is_some()).collect();
    let blocks: Vec<&FeatureBlock> = live.iter().map(|&k| &second[k].as_ref().unwrap().1).collect();
    let refined = models.refine.predict(&blocks)?;
    let mut out = vec![None; props.len()];
    for (&k, (row, conf)) in live.iter().zip(refined) {
        let (initial, _, frame) = second[k].as_ref().unwrap();
        out[k] = Some(Stage2Prediction {
            initial: *initial,
            cuboid: decode_world(&models.codec, &row, frame),
            confidence: conf,
        });
    }
    Ok(out)
}

/// [`stage2_predict_batch`] for a single proposal.
pub fn stage2_predict(
    models: &Stage2Models,
    cloud: &PointCloud,
    fg: &[f64],
    prop: &CylinderProposal,
    seed: u64,
) -> Result<Stage2Prediction, DetectorError> {
    stage2_predict_batch(models, cloud, fg, std::slice::from_ref(prop), seed)?
        .pop()
        .flatten()
        .ok_or(DetectorError::EmptyProposal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LossConfig;
    use bevclick_core::geometry::Point;

    fn models() -> Stage2Models {
        let codec = BoxCodec::new(&LossConfig::default(), [1.53, 1.63, 3.88]);
        Stage2Models::new(&Stage2Config::desk(), codec, 3).unwrap()
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let m = models();
        let cloud: PointCloud = (0..80)
            .map(|i| Point::new(2.0 + (i % 9) as f64 * 0.2, -0.6 + (i % 5) as f64 * 0.4, 10.0 + (i % 11) as f64 * 0.2, 0.3))
            .collect();
        let fg = vec![0.8; cloud.len()];
        let prop = CylinderProposal::new(3.0, 11.0, 4.0, 0.9).unwrap();
        let p = stage2_predict(&m, &cloud, &fg, &prop, 0).unwrap();
        assert!(p.cuboid.is_valid() && p.initial.is_valid());
        assert!(p.confidence > 0.0 && p.confidence < 1.0);
        let again = stage2_predict(&m, &cloud, &fg, &prop, 0).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn empty_proposal_yields_none() {
        let m = models();
        let cloud: PointCloud = vec![Point::new(0.0, 1.0, 5.0, 0.1)].into_iter().collect();
        let far = CylinderProposal::new(50.0, 50.0, 4.0, 0.9).unwrap();
        let out = stage2_predict_batch(&m, &cloud, &[0.5], &[far], 0).unwrap();
        assert_eq!(out, vec![None]);
    }
}
