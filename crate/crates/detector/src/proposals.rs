//! Cylindrical proposals from stage-1 votes and the two suppression steps.

use bevclick_core::geometry::{bev_iou, Cuboid, CylinderProposal};

use crate::config::{ClassProfile, Stage1Config};
use crate::stage1::Stage1Output;

/// One proposal per resampled point scoring above the profile threshold,
/// centered at that point's decoded vote, in point order.
pub fn generate_proposals(out: &Stage1Output, s1: &Stage1Config, profile: &ClassProfile) -> Vec<CylinderProposal> {
    (0..out.fg.len())
        .filter(|&i| out.fg[i] > profile.fg_threshold)
        .filter_map(|i| {
            let (x, z) = out.vote(i, s1);
            if !profile.in_search_range(x, z) {
                return None;
            }
            CylinderProposal::new(x, z, profile.proposal_radius, out.fg[i]).ok()
        })
        .collect()
}

/// Indices sorted by confidence descending; ties keep index order.
fn by_confidence(conf: impl Iterator<Item = f64>) -> Vec<usize> {
    let conf: Vec<f64> = conf.collect();
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    order
}

/// Center-aware NMS: greedily keep a proposal when its (x, z) center is
/// farther than `min_distance` from every kept one. Returns kept indices in
/// keep order.
pub fn ca_nms_indices(props: &[CylinderProposal], min_distance: f64) -> Vec<usize> {
    let d2 = min_distance * min_distance;
    let mut kept: Vec<usize> = Vec::new();
    for i in by_confidence(props.iter().map(|p| p.confidence)) {
        let p = &props[i];
        if kept.iter().all(|&k| (props[k].cx - p.cx).powi(2) + (props[k].cz - p.cz).powi(2) > d2) {
            kept.push(i);
        }
    }
    kept
}

pub fn ca_nms(props: &[CylinderProposal], min_distance: f64) -> Vec<CylinderProposal> {
    ca_nms_indices(props, min_distance).into_iter().map(|i| props[i]).collect()
}

/// Oriented NMS: greedily drop any box whose BEV IoU with a kept box
/// exceeds `iou_threshold`. Returns kept indices in keep order.
pub fn oriented_nms(boxes: &[(Cuboid, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in by_confidence(boxes.iter().map(|b| b.1)) {
        if kept.iter().all(|&k| bev_iou(&boxes[k].0, &boxes[i].0) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use bevclick_core::geometry::Point;
    use bevclick_nn::Tensor;

    fn prop(x: f64, z: f64, c: f64) -> CylinderProposal {
        CylinderProposal::new(x, z, 4.0, c).unwrap()
    }

    #[test]
    fn ca_nms_example() {
        let props = [prop(0.0, 0.0, 0.9), prop(1.0, 0.0, 0.8), prop(5.0, 0.0, 0.7)];
        assert_eq!(ca_nms_indices(&props, 4.0), vec![0, 2]);
        assert_eq!(ca_nms_indices(&props[..1], 4.0), vec![0]);
        let far = [prop(0.0, 0.0, 0.1), prop(10.0, 0.0, 0.5), prop(20.0, 0.0, 0.3)];
        assert_eq!(ca_nms_indices(&far, 4.0), vec![1, 2, 0]);
    }

    #[test]
    fn oriented_nms_examples() {
        let b = Cuboid::new(0.0, 1.0, 10.0, 1.5, 1.6, 4.0, 0.0).unwrap();
        assert_eq!(oriented_nms(&[(b, 0.9), (b, 0.8)], 0.3), vec![0]);
        assert!(oriented_nms(&[], 0.3).is_empty());
        // Same footprint shifted along l so the overlap is a third of a box:
        // IoU = (1/3) / (5/3) = 0.2.
        let shifted = Cuboid { cx: b.cx + b.l * 2.0 / 3.0, ..b };
        assert!((bev_iou(&b, &shifted) - 0.2).abs() < 1e-9);
        assert_eq!(oriented_nms(&[(b, 0.9), (shifted, 0.8)], 0.3), vec![0, 1]);
    }

    fn output(fg: Vec<f64>, offsets: &[(usize, f64, usize, f64)]) -> Stage1Output {
        let n = fg.len();
        let mut center = Tensor::zeros(n, 40);
        for (i, &(bx, rx, bz, rz)) in offsets.iter().enumerate() {
            center.row_mut(i)[bx] = 5.0;
            center.row_mut(i)[10 + bx] = rx;
            center.row_mut(i)[20 + bz] = 5.0;
            center.row_mut(i)[30 + bz] = rz;
        }
        Stage1Output {
            indices: (0..n).collect(),
            points: vec![Point::new(5.0, 1.0, 10.0, 0.0); n],
            fg,
            center,
            num_bins: 10,
        }
    }

    #[test]
    fn proposals_from_votes() {
        let s1 = Stage1Config::desk();
        let car = ClassProfile::car();
        // Point at (5, 10) voting for itself: offset 0 is the start of bin 5
        // with residual -1.
        let out = output(vec![0.9], &[(5, -1.0, 5, -1.0)]);
        let props = generate_proposals(&out, &s1, &car);
        assert_eq!(props.len(), 1);
        assert!((props[0].cx - 5.0).abs() < 1e-12 && (props[0].cz - 10.0).abs() < 1e-12);
        assert_eq!((props[0].confidence, props[0].radius), (0.9, 4.0));
        let low = output(vec![0.1, 0.05], &[(5, 0.0, 5, 0.0), (5, 0.0, 5, 0.0)]);
        assert!(generate_proposals(&low, &s1, &car).is_empty());
        let ped = generate_proposals(&out, &s1, &ClassProfile::pedestrian());
        assert_eq!(ped[0].radius, 1.0);
    }
}
