//! Sampling and neighborhood kernels for point sets.

use crate::NnError;

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Greedy max-min selection of `k` indices starting from `seed_index`.
/// Ties go to the lower index. When `k` exceeds the cloud size the
/// selection repeats cyclically.
pub fn farthest_point_sample(coords: &[[f64; 3]], k: usize, seed_index: usize) -> Result<Vec<usize>, NnError> {
    let n = coords.len();
    if n == 0 {
        return Err(NnError::EmptyCloud);
    }
    if seed_index >= n {
        return Err(NnError::Shape(format!("seed index {seed_index} out of {n} points")));
    }
    let take = k.min(n);
    let mut out = Vec::with_capacity(k);
    let mut best = vec![f64::INFINITY; n];
    let mut cur = seed_index;
    for _ in 0..take {
        out.push(cur);
        let c = coords[cur];
        let mut next = 0;
        let mut next_d = -1.0;
        for (i, p) in coords.iter().enumerate() {
            let d = dist2(p, &c);
            if d < best[i] {
                best[i] = d;
            }
            if best[i] > next_d {
                next_d = best[i];
                next = i;
            }
        }
        cur = next;
    }
    for i in take..k {
        out.push(out[i % take]);
    }
    Ok(out)
}

/// Up to `cap` indices within `radius` of each centroid, in scan order.
/// A centroid with no neighbor gets its nearest point instead.
pub fn ball_query_group(coords: &[[f64; 3]], centroids: &[[f64; 3]], radius: f64, cap: usize) -> Vec<Vec<usize>> {
    let r2 = radius * radius;
    centroids
        .iter()
        .map(|c| {
            let mut g = Vec::with_capacity(cap);
            for (i, p) in coords.iter().enumerate() {
                if dist2(p, c) <= r2 {
                    g.push(i);
                    if g.len() == cap {
                        break;
                    }
                }
            }
            if g.is_empty() {
                if let Some(i) = nearest(coords, c) {
                    g.push(i);
                }
            }
            g
        })
        .collect()
}

fn nearest(coords: &[[f64; 3]], c: &[f64; 3]) -> Option<usize> {
    coords
        .iter()
        .enumerate()
        .map(|(i, p)| (i, dist2(p, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Inverse-squared-distance weight used by feature propagation.
pub fn idw_weight(d2: f64) -> f64 {
    1.0 / (d2 + 1e-8)
}

/// Three nearest coarse points for every fine point with normalized
/// inverse-distance weights. With fewer than three coarse points the
/// missing slots point at the nearest one with zero weight.
pub fn three_nn(fine: &[[f64; 3]], coarse: &[[f64; 3]]) -> Result<(Vec<[usize; 3]>, Vec<[f64; 3]>), NnError> {
    if coarse.is_empty() {
        return Err(NnError::EmptyCloud);
    }
    let mut idx = Vec::with_capacity(fine.len());
    let mut wts = Vec::with_capacity(fine.len());
    for f in fine {
        let mut best = [(usize::MAX, f64::INFINITY); 3];
        for (i, c) in coarse.iter().enumerate() {
            let d = dist2(f, c);
            if d < best[2].1 {
                best[2] = (i, d);
                if best[2].1 < best[1].1 {
                    best.swap(1, 2);
                    if best[1].1 < best[0].1 {
                        best.swap(0, 1);
                    }
                }
            }
        }
        let mut w = [0.0; 3];
        let mut ii = [best[0].0; 3];
        for k in 0..3 {
            if best[k].0 != usize::MAX {
                ii[k] = best[k].0;
                w[k] = idw_weight(best[k].1);
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        idx.push(ii);
        wts.push(w);
    }
    Ok((idx, wts))
}
