//! Full-scene inference, click-driven active annotation and checkpoints.

use std::path::Path;

use bevclick_core::geometry::{Cuboid, CylinderProposal, PointCloud};
use bevclick_core::kitti::ClickAnnotation;
use bevclick_core::weak::pseudo_foreground_field;
use bevclick_nn::Checkpoint;

use crate::codec::BoxCodec;
use crate::config::{ClassProfile, DetectorConfig};
use crate::proposals::{ca_nms, generate_proposals, oriented_nms};
use crate::stage1::{stage1_forward, Stage1Model};
use crate::stage2::{stage2_predict_batch, Stage2Models};
use crate::DetectorError;

/// BEV IoU above which oriented NMS suppresses a box.
pub const NMS_IOU: f64 = 0.3;
/// Active annotation probes a `GRID × GRID` lattice around the click.
pub const GRID: usize = 5;
pub const GRID_STEP: f64 = 0.1;

/// A trained detector: both stages plus their configuration.
#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    pub stage1: Stage1Model,
    pub stage2: Stage2Models,
}

impl Detector {
    /// Untrained networks for `cfg`.
    pub fn new(cfg: DetectorConfig) -> Result<Self, DetectorError> {
        let stage1 = Stage1Model::new(&cfg.stage1, cfg.train.seed)?;
        let stage2 = Stage2Models::new(&cfg.stage2, BoxCodec::new(&cfg.loss, cfg.profile.anchor), cfg.train.seed)?;
        Ok(Self { cfg, stage1, stage2 })
    }

    /// Load both checkpoints; their headers must agree on preset and class.
    pub fn load(stage1: &Path, stage2: &Path) -> Result<Self, DetectorError> {
        let (cfg, s1) = load_stage1(stage1)?;
        let (cfg2, s2) = load_stage2(stage2)?;
        if cfg.preset != cfg2.preset || cfg.profile.class != cfg2.profile.class {
            return Err(DetectorError::Config("stage-1 and stage-2 checkpoints come from different presets or classes".into()));
        }
        Ok(Self { cfg, stage1: s1, stage2: s2 })
    }
}

fn read_checkpoint(path: &Path, stage: &str) -> Result<(DetectorConfig, Checkpoint), DetectorError> {
    let ck = Checkpoint::load(path)?;
    let (s, preset, class) = DetectorConfig::parse_meta(&ck.meta)?;
    if s != stage {
        return Err(DetectorError::Config(format!("{} holds a {s} checkpoint, expected {stage}", path.display())));
    }
    Ok((DetectorConfig::new(preset, class), ck))
}

pub fn save_stage1(model: &Stage1Model, cfg: &DetectorConfig, path: &Path) -> Result<(), DetectorError> {
    Ok(Checkpoint::from_params(cfg.meta("stage1"), &model.params).save(path)?)
}

pub fn load_stage1(path: &Path) -> Result<(DetectorConfig, Stage1Model), DetectorError> {
    let (cfg, ck) = read_checkpoint(path, "stage1")?;
    let mut model = Stage1Model::new(&cfg.stage1, 0)?;
    model.params.load_values(&ck.tensors)?;
    Ok((cfg, model))
}

/// Both stage-2 networks go into one file; their tensor names differ by
/// prefix.
pub fn save_stage2(models: &Stage2Models, cfg: &DetectorConfig, path: &Path) -> Result<(), DetectorError> {
    let mut ck = Checkpoint::from_params(cfg.meta("stage2"), &models.initial.params);
    ck.tensors.extend(models.refine.params.tensors.iter().cloned());
    Ok(ck.save(path)?)
}

pub fn load_stage2(path: &Path) -> Result<(DetectorConfig, Stage2Models), DetectorError> {
    let (cfg, ck) = read_checkpoint(path, "stage2")?;
    let mut models = Stage2Models::new(&cfg.stage2, BoxCodec::new(&cfg.loss, cfg.profile.anchor), 0)?;
    models.initial.params.load_values(&ck.tensors)?;
    models.refine.params.load_values(&ck.tensors)?;
    Ok((cfg, models))
}

/// Stage 1, proposals, CA-NMS, both stage-2 networks and oriented NMS.
/// Returns world-frame boxes with confidences, most confident first.
pub fn infer_scene(det: &Detector, cloud: &PointCloud, seed: u64) -> Result<Vec<(Cuboid, f64)>, DetectorError> {
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let out = stage1_forward(&det.stage1, cloud, seed)?;
    let props = generate_proposals(&out, &det.cfg.stage1, &det.cfg.profile);
    let kept = ca_nms(&props, det.cfg.profile.nms_distance);
    if kept.is_empty() {
        return Ok(Vec::new());
    }
    let fg = out.scene_scores(cloud);
    let preds = stage2_predict_batch(&det.stage2, cloud, &fg, &kept, seed)?;
    let boxes: Vec<(Cuboid, f64)> = preds.into_iter().flatten().map(|p| (p.cuboid, p.confidence)).collect();
    Ok(oriented_nms(&boxes, NMS_IOU).into_iter().map(|i| boxes[i]).collect())
}

/// Cylinder centers probed around a click: a 5 × 5 lattice with 0.1 m
/// spacing centered on it, row-major in `x` then `z`.
pub fn candidate_grid(x: f64, z: f64) -> Vec<[f64; 2]> {
    let half = (GRID as f64 - 1.0) / 2.0;
    let mut v = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            v.push([x + (i as f64 - half) * GRID_STEP, z + (j as f64 - half) * GRID_STEP]);
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveResult {
    pub cuboid: Cuboid,
    pub confidence: f64,
    pub candidates: Vec<[f64; 2]>,
    /// Confidence per candidate; `None` where the cylinder held no points.
    pub candidate_confidences: Vec<Option<f64>>,
}

/// Complete a cuboid from a click: run stage 2 on every lattice cylinder,
/// with click pseudo labels as the foreground channel, and keep the most
/// confident result (ties go to the lower candidate index).
pub fn active_annotate(models: &Stage2Models, profile: &ClassProfile, cloud: &PointCloud, click: (f64, f64), seed: u64) -> Result<ActiveResult, DetectorError> {
    let candidates = candidate_grid(click.0, click.1);
    let mut confidences = Vec::with_capacity(candidates.len());
    let mut best: Option<(Cuboid, f64)> = None;
    for (k, &[x, z]) in candidates.iter().enumerate() {
        let fg = pseudo_foreground_field(cloud, &[ClickAnnotation::new(profile.class.name(), x, z)], &profile.pseudo);
        let prop = CylinderProposal::new(x, z, profile.proposal_radius, 1.0)?;
        let pred = stage2_predict_batch(models, cloud, &fg, &[prop], seed ^ (k as u64))?.pop().flatten();
        confidences.push(pred.map(|p| p.confidence));
        if let Some(p) = pred {
            if best.is_none_or(|(_, c)| p.confidence > c) {
                best = Some((p.cuboid, p.confidence));
            }
        }
    }
    let (cuboid, confidence) = best.ok_or(DetectorError::NoPoints { x: click.0, z: click.1 })?;
    Ok(ActiveResult {
        cuboid,
        confidence,
        candidates,
        candidate_confidences: confidences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bevclick_core::geometry::Point;

    #[test]
    fn grid_spans_click() {
        let g = candidate_grid(10.0, 20.0);
        assert_eq!(g.len(), 25);
        assert!((g[0][0] - 9.8).abs() < 1e-12 && (g[0][1] - 19.8).abs() < 1e-12);
        assert!((g[24][0] - 10.2).abs() < 1e-12 && (g[24][1] - 20.2).abs() < 1e-12);
    }

    #[test]
    fn active_on_empty_region_reports_no_points() {
        let det = Detector::new(DetectorConfig::desk()).unwrap();
        let cloud: PointCloud = vec![Point::new(0.0, 1.0, 5.0, 0.1)].into_iter().collect();
        let r = active_annotate(&det.stage2, &det.cfg.profile, &cloud, (40.0, 40.0), 0);
        assert!(matches!(r, Err(DetectorError::NoPoints { .. })));
    }

    #[test]
    fn active_confidence_is_candidate_max() {
        let det = Detector::new(DetectorConfig::desk()).unwrap();
        let cloud: PointCloud = (0..300)
            .map(|i| Point::new(9.0 + (i % 20) as f64 * 0.1, 0.5 + (i % 7) as f64 * 0.2, 19.0 + (i / 20) as f64 * 0.15, 0.4))
            .collect();
        let r = active_annotate(&det.stage2, &det.cfg.profile, &cloud, (10.0, 20.0), 0).unwrap();
        let max = r.candidate_confidences.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.confidence, max);
    }

    #[test]
    fn checkpoints_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let det = Detector::new(DetectorConfig::desk()).unwrap();
        let (p1, p2) = (dir.path().join("s1.ckpt"), dir.path().join("s2.ckpt"));
        save_stage1(&det.stage1, &det.cfg, &p1).unwrap();
        save_stage2(&det.stage2, &det.cfg, &p2).unwrap();
        let back = Detector::load(&p1, &p2).unwrap();
        assert_eq!(back.stage1.params, det.stage1.params);
        assert_eq!(back.stage2.initial.params, det.stage2.initial.params);
        assert_eq!(back.stage2.refine.params, det.stage2.refine.params);
        assert!(load_stage2(&p1).is_err());
    }

    #[test]
    fn empty_scene_gives_no_boxes() {
        let det = Detector::new(DetectorConfig::desk()).unwrap();
        assert!(infer_scene(&det, &PointCloud::default(), 0).unwrap().is_empty());
    }
}
