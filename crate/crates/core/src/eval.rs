//! KITTI-style detection evaluation.
//!
//! Matching is greedy over detections in descending confidence. Groundtruth
//! outside the evaluated difficulty regime and DontCare image regions do not
//! count as misses; detections explained by them are ignored instead of
//! being counted as false positives.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::geometry::{bev_iou, iou_3d, Cuboid};
use crate::kitti::LabelRecord;
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IouKind {
    Bev,
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Cuboid, b: &Cuboid) -> f64 {
        match self {
            IouKind::Bev => bev_iou(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            IouKind::Bev => "BEV",
            IouKind::ThreeD => "3D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    Easy,
    Moderate,
    Hard,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Easy, Regime::Moderate, Regime::Hard];

    pub fn label(self) -> &'static str {
        match self {
            Regime::Easy => "Easy",
            Regime::Moderate => "Moderate",
            Regime::Hard => "Hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApProtocol {
    /// Recall anchors 0, 0.1, ..., 1.
    Eleven,
    /// Recall anchors 1/40, 2/40, ..., 1.
    Forty,
}

impl ApProtocol {
    pub fn anchors(self) -> Vec<f64> {
        match self {
            ApProtocol::Eleven => (0..=10).map(|i| i as f64 / 10.0).collect(),
            ApProtocol::Forty => (1..=40).map(|i| i as f64 / 40.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub iou_kind: IouKind,
    pub regime: Regime,
    pub protocol: ApProtocol,
}

impl EvalConfig {
    pub fn new(iou_threshold: f64, iou_kind: IouKind, regime: Regime) -> Self {
        Self {
            iou_threshold,
            iou_kind,
            regime,
            protocol: ApProtocol::Eleven,
        }
    }
}

/// Which regimes a groundtruth object belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RegimeSet {
    pub easy: bool,
    pub moderate: bool,
    pub hard: bool,
}

impl RegimeSet {
    pub const ALL: RegimeSet = RegimeSet {
        easy: true,
        moderate: true,
        hard: true,
    };

    pub fn contains(&self, r: Regime) -> bool {
        match r {
            Regime::Easy => self.easy,
            Regime::Moderate => self.moderate,
            Regime::Hard => self.hard,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.easy || self.moderate || self.hard)
    }
}

/// What difficulty is judged from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DifficultyInput {
    /// KITTI label attributes: 2D box height in pixels, occlusion level,
    /// truncation ratio.
    Kitti {
        bbox_height: f64,
        occlusion: i32,
        truncation: f64,
    },
    /// Synthetic groundtruth: number of scene points inside the box.
    Synthetic { point_count: usize },
}

/// Synthetic point-count thresholds for easy / moderate / hard.
pub const SYNTHETIC_POINT_THRESHOLDS: [usize; 3] = [120, 40, 10];

pub fn assign_difficulty(input: DifficultyInput) -> RegimeSet {
    match input {
        DifficultyInput::Kitti {
            bbox_height,
            occlusion,
            truncation,
        } => {
            let ok = |min_h: f64, max_occ: i32, max_trunc: f64| {
                bbox_height >= min_h && (0..=max_occ).contains(&occlusion) && truncation <= max_trunc
            };
            RegimeSet {
                easy: ok(40.0, 0, 0.15),
                moderate: ok(25.0, 1, 0.30),
                hard: ok(25.0, 2, 0.50),
            }
        }
        DifficultyInput::Synthetic { point_count } => {
            let [e, m, h] = SYNTHETIC_POINT_THRESHOLDS;
            RegimeSet {
                easy: point_count >= e,
                moderate: point_count >= m,
                hard: point_count >= h,
            }
        }
    }
}

/// Difficulty of a parsed KITTI label.
pub fn label_difficulty(rec: &LabelRecord) -> RegimeSet {
    assign_difficulty(DifficultyInput::Kitti {
        bbox_height: rec.bbox_height(),
        occlusion: rec.occlusion,
        truncation: rec.truncation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cuboid: Cuboid,
    pub confidence: f64,
    pub scene_id: String,
    /// Image-plane box, used only for DontCare overlap.
    pub bbox: Option<[f64; 4]>,
}

impl Detection {
    pub fn new(cuboid: Cuboid, confidence: f64, scene_id: impl Into<String>) -> Self {
        Self {
            cuboid,
            confidence,
            scene_id: scene_id.into(),
            bbox: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cuboid: Cuboid,
    pub regimes: RegimeSet,
}

/// Everything needed to evaluate one scene.
#[derive(Debug, Clone, Default)]
pub struct SceneEval {
    pub detections: Vec<Detection>,
    pub groundtruth: Vec<GroundTruth>,
    pub dont_care: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetOutcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Aligned with the input detections.
    pub outcomes: Vec<DetOutcome>,
    /// Aligned with the input groundtruth.
    pub gt_matched: Vec<bool>,
    /// Number of groundtruth objects inside the evaluated regime.
    pub num_gt: usize,
}

fn overlap_over_first(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let area = (a[2] - a[0]) * (a[3] - a[1]);
    if area <= 0.0 {
        0.0
    } else {
        iw * ih / area
    }
}

/// Sort order used everywhere: confidence descending, then input index.
pub fn confidence_order(confidences: impl Iterator<Item = f64>) -> Vec<usize> {
    let conf: Vec<f64> = confidences.collect();
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    order
}

/// Greedy matching of one scene's detections to its groundtruth.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], dont_care: &[[f64; 4]], cfg: &EvalConfig) -> MatchResult {
    let mut outcomes = vec![DetOutcome::FalsePositive; dets.len()];
    let mut taken = vec![false; gts.len()];
    let mut gt_matched = vec![false; gts.len()];
    for di in confidence_order(dets.iter().map(|d| d.confidence)) {
        let det = &dets[di];
        let mut best_valid: Option<(usize, f64)> = None;
        let mut best_other: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = cfg.iou_kind.iou(&det.cuboid, &gt.cuboid);
            let slot = if gt.regimes.contains(cfg.regime) {
                &mut best_valid
            } else {
                &mut best_other
            };
            if slot.is_none_or(|(_, b)| iou > b) {
                *slot = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best_valid.filter(|&(_, iou)| iou > cfg.iou_threshold) {
            taken[gi] = true;
            gt_matched[gi] = true;
            outcomes[di] = DetOutcome::TruePositive;
        } else if let Some((gi, _)) = best_other.filter(|&(_, iou)| iou > cfg.iou_threshold) {
            taken[gi] = true;
            outcomes[di] = DetOutcome::Ignored;
        } else if det
            .bbox
            .is_some_and(|b| dont_care.iter().any(|dc| overlap_over_first(&b, dc) > 0.5))
        {
            outcomes[di] = DetOutcome::Ignored;
        }
    }
    MatchResult {
        outcomes,
        gt_matched,
        num_gt: gts.iter().filter(|g| g.regimes.contains(cfg.regime)).count(),
    }
}

/// Interpolated AP from scored true/false positives pooled over all scenes.
/// `None` when there is no groundtruth to recall.
pub fn average_precision(scored: &[(f64, bool)], num_gt: usize, protocol: ApProtocol) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let order = confidence_order(scored.iter().map(|s| s.0));
    // Precision/recall after each distinct confidence level.
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_level = order.get(k + 1).is_none_or(|&j| scored[j].0 != scored[i].0);
        if last_of_level {
            curve.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    let anchors = protocol.anchors();
    let sum: f64 = anchors
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(sum / anchors.len() as f64)
}

/// Match every scene and compute AP for one configuration.
pub fn evaluate(scenes: &[SceneEval], cfg: &EvalConfig, exec: Execution) -> Option<f64> {
    let matches = par::map(exec, scenes, |s| match_detections(&s.detections, &s.groundtruth, &s.dont_care, cfg));
    let mut scored = Vec::new();
    let mut num_gt = 0;
    for (scene, m) in scenes.iter().zip(&matches) {
        num_gt += m.num_gt;
        for (det, outcome) in scene.detections.iter().zip(&m.outcomes) {
            match outcome {
                DetOutcome::TruePositive => scored.push((det.confidence, true)),
                DetOutcome::FalsePositive => scored.push((det.confidence, false)),
                DetOutcome::Ignored => {}
            }
        }
    }
    average_precision(&scored, num_gt, cfg.protocol)
}

/// AP for every regime and IoU kind at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class: String,
    pub iou_threshold: f64,
    pub protocol: ApProtocol,
    /// `[regime][kind]`, kinds ordered BEV then 3D.
    pub ap: [[Option<f64>; 2]; 3],
}

impl EvalReport {
    pub fn compute(class: &str, scenes: &[SceneEval], iou_threshold: f64, protocol: ApProtocol, exec: Execution) -> Self {
        let mut ap = [[None; 2]; 3];
        for (ri, regime) in Regime::ALL.into_iter().enumerate() {
            for (ki, kind) in [IouKind::Bev, IouKind::ThreeD].into_iter().enumerate() {
                let cfg = EvalConfig {
                    iou_threshold,
                    iou_kind: kind,
                    regime,
                    protocol,
                };
                ap[ri][ki] = evaluate(scenes, &cfg, exec);
            }
        }
        Self {
            class: class.to_string(),
            iou_threshold,
            protocol,
            ap,
        }
    }

    pub fn get(&self, regime: Regime, kind: IouKind) -> Option<f64> {
        let ki = match kind {
            IouKind::Bev => 0,
            IouKind::ThreeD => 1,
        };
        self.ap[regime as usize][ki]
    }

    /// One `key=value` record per cell.
    pub fn records(&self) -> String {
        let mut out = String::new();
        for regime in Regime::ALL {
            for kind in [IouKind::Bev, IouKind::ThreeD] {
                let ap = self
                    .get(regime, kind)
                    .map_or_else(|| "absent".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(
                    out,
                    "class={} regime={} kind={} iou={:.2} protocol={} ap={}",
                    self.class,
                    regime.label().to_lowercase(),
                    kind.label(),
                    self.iou_threshold,
                    match self.protocol {
                        ApProtocol::Eleven => 11,
                        ApProtocol::Forty => 40,
                    },
                    ap
                );
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "   -  ".to_string(), |v| format!("{:6.2}", 100.0 * v));
        let thr = self.iou_threshold;
        writeln!(f, "{} AP ({}-point)", self.class, match self.protocol {
            ApProtocol::Eleven => 11,
            ApProtocol::Forty => 40,
        })?;
        writeln!(f, "{:>10} | {:^26} | {:^26}", "", format!("BEV@{thr:.1}"), format!("3D Box@{thr:.1}"))?;
        writeln!(f, "{:>10} | {:>8}{:>9}{:>9} | {:>8}{:>9}{:>9}", "", "Easy", "Moderate", "Hard", "Easy", "Moderate", "Hard")?;
        let row = |k: usize| {
            Regime::ALL
                .iter()
                .map(|&r| format!("{:>8}", cell(self.ap[r as usize][k])))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(f, "{:>10} | {} | {}", "AP", row(0), row(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(cx: f64, cz: f64) -> Cuboid {
        Cuboid::new(cx, 0.8, cz, 1.5, 1.6, 3.9, 0.0).unwrap()
    }

    fn gt(c: Cuboid) -> GroundTruth {
        GroundTruth {
            cuboid: c,
            regimes: RegimeSet::ALL,
        }
    }

    fn cfg(thr: f64) -> EvalConfig {
        EvalConfig::new(thr, IouKind::Bev, Regime::Moderate)
    }

    #[test]
    fn tp_and_fp_by_threshold() {
        let g = car(0.0, 10.0);
        // Shift along x (length axis) for a chosen BEV IoU: overlap (3.9-d)/(3.9+d).
        let shifted = |iou: f64| car(3.9 * (1.0 - iou) / (1.0 + iou), 10.0);
        let r = match_detections(&[Detection::new(shifted(0.8), 0.9, "a")], &[gt(g)], &[], &cfg(0.7));
        assert_eq!(r.outcomes, vec![DetOutcome::TruePositive]);
        let r = match_detections(&[Detection::new(shifted(0.6), 0.9, "a")], &[gt(g)], &[], &cfg(0.7));
        assert_eq!(r.outcomes, vec![DetOutcome::FalsePositive]);
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let g = car(0.0, 10.0);
        let dets = [Detection::new(g, 0.5, "a"), Detection::new(g, 0.9, "a")];
        let r = match_detections(&dets, &[gt(g)], &[], &cfg(0.7));
        assert_eq!(r.outcomes, vec![DetOutcome::FalsePositive, DetOutcome::TruePositive]);
        assert_eq!(r.gt_matched, vec![true]);
    }

    #[test]
    fn out_of_regime_gt_is_ignored() {
        let g = GroundTruth {
            cuboid: car(0.0, 10.0),
            regimes: RegimeSet {
                easy: false,
                moderate: false,
                hard: true,
            },
        };
        let r = match_detections(&[Detection::new(g.cuboid, 0.9, "a")], &[g], &[], &cfg(0.7));
        assert_eq!(r.outcomes, vec![DetOutcome::Ignored]);
        assert_eq!(r.num_gt, 0);
    }

    #[test]
    fn dont_care_region_ignores() {
        let mut d = Detection::new(car(30.0, 10.0), 0.9, "a");
        d.bbox = Some([100.0, 100.0, 150.0, 140.0]);
        let r = match_detections(&[d], &[], &[[90.0, 90.0, 160.0, 150.0]], &cfg(0.7));
        assert_eq!(r.outcomes, vec![DetOutcome::Ignored]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[(0.9, true)], 1, ApProtocol::Eleven), Some(1.0));
        assert_eq!(average_precision(&[(0.9, true)], 1, ApProtocol::Forty), Some(1.0));
        assert_eq!(average_precision(&[], 3, ApProtocol::Eleven), Some(0.0));
        assert_eq!(average_precision(&[(0.9, true)], 0, ApProtocol::Eleven), None);
    }

    #[test]
    fn difficulty_table() {
        let k = |h: f64, occ: i32, trunc: f64| {
            assign_difficulty(DifficultyInput::Kitti {
                bbox_height: h,
                occlusion: occ,
                truncation: trunc,
            })
        };
        assert_eq!(k(50.0, 0, 0.0), RegimeSet::ALL);
        assert_eq!(
            k(30.0, 1, 0.0),
            RegimeSet {
                easy: false,
                moderate: true,
                hard: true
            }
        );
        assert!(k(50.0, 3, 0.0).is_empty());
        let s = |n| assign_difficulty(DifficultyInput::Synthetic { point_count: n });
        assert_eq!(s(500), RegimeSet::ALL);
        assert!(!s(50).easy && s(50).moderate);
        assert!(s(9).is_empty());
    }

    #[test]
    fn report_layout() {
        let g = car(0.0, 10.0);
        let scenes = vec![SceneEval {
            detections: vec![Detection::new(g, 0.9, "0")],
            groundtruth: vec![gt(g)],
            dont_care: vec![],
        }];
        let rep = EvalReport::compute("Car", &scenes, 0.7, ApProtocol::Eleven, Execution::Sequential);
        let text = rep.to_string();
        for needle in ["Easy", "Moderate", "Hard", "BEV@0.7", "3D Box@0.7", "100.00"] {
            assert!(text.contains(needle), "{text}");
        }
        assert_eq!(rep.records().lines().count(), 6);
    }
}
