//! CA-NMS and oriented NMS against brute-force greedy oracles.

use bevclick_core::geometry::{bev_iou, Cuboid, CylinderProposal};
use bevclick_detector::proposals::{ca_nms_indices, oriented_nms};
use proptest::prelude::*;

/// Repeatedly take the most confident survivor (lowest index on ties) and
/// delete everything it suppresses.
fn greedy_oracle(conf: &[f64], suppresses: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; conf.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..conf.len() {
            if alive[i] && best.is_none_or(|b| conf[i] > conf[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        kept.push(b);
        alive[b] = false;
        for i in 0..conf.len() {
            if alive[i] && suppresses(b, i) {
                alive[i] = false;
            }
        }
    }
    kept
}

fn proposals() -> impl Strategy<Value = Vec<CylinderProposal>> {
    prop::collection::vec((-20.0..20.0f64, 0.0..40.0f64, 0u8..20), 0..40).prop_map(|v| {
        v.into_iter()
            .map(|(x, z, c)| CylinderProposal::new(x, z, 4.0, c as f64 / 20.0).unwrap())
            .collect()
    })
}

fn boxes() -> impl Strategy<Value = Vec<(Cuboid, f64)>> {
    prop::collection::vec((-8.0..8.0f64, 0.0..16.0f64, -3.2..3.2f64, 1.0..5.0f64, 0u8..20), 0..30).prop_map(|v| {
        v.into_iter()
            .map(|(x, z, t, l, c)| (Cuboid::new(x, 0.8, z, 1.5, 1.6, l, t).unwrap(), c as f64 / 20.0))
            .collect()
    })
}

fn dist(a: &CylinderProposal, b: &CylinderProposal) -> f64 {
    ((a.cx - b.cx).powi(2) + (a.cz - b.cz).powi(2)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ca_nms_matches_oracle(props in proposals()) {
        let conf: Vec<f64> = props.iter().map(|p| p.confidence).collect();
        let oracle = greedy_oracle(&conf, |a, b| dist(&props[a], &props[b]) <= 4.0);
        let kept = ca_nms_indices(&props, 4.0);
        prop_assert_eq!(&kept, &oracle);
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                prop_assert!(dist(&props[a], &props[b]) > 4.0);
            }
        }
    }

    #[test]
    fn oriented_nms_matches_oracle(boxes in boxes()) {
        let conf: Vec<f64> = boxes.iter().map(|b| b.1).collect();
        let oracle = greedy_oracle(&conf, |a, b| bev_iou(&boxes[a].0, &boxes[b].0) > 0.3);
        let kept = oriented_nms(&boxes, 0.3);
        prop_assert_eq!(&kept, &oracle);
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                prop_assert!(bev_iou(&boxes[a].0, &boxes[b].0) <= 0.3);
            }
        }
    }

    #[test]
    fn ca_nms_is_permutation_invariant(
        pts in prop::collection::vec((-20.0..20.0f64, 0.0..40.0f64), 1..30),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        // Distinct confidences make the kept set independent of order.
        let props: Vec<CylinderProposal> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, z))| CylinderProposal::new(x, z, 4.0, 1.0 / (i as f64 + 2.0)).unwrap())
            .collect();
        let mut order: Vec<usize> = (0..props.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let shuffled: Vec<CylinderProposal> = order.iter().map(|&i| props[i]).collect();
        let mut a: Vec<usize> = ca_nms_indices(&props, 4.0);
        let mut b: Vec<usize> = ca_nms_indices(&shuffled, 4.0).into_iter().map(|k| order[k]).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn identical_boxes_keep_the_more_confident() {
    let b = Cuboid::new(0.0, 0.8, 10.0, 1.5, 1.6, 3.9, 0.0).unwrap();
    assert_eq!(oriented_nms(&[(b, 0.8), (b, 0.9)], 0.3), vec![1]);
    assert!(oriented_nms(&[], 0.3).is_empty());
}
