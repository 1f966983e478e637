use super::PosePrediction;
use crate::COCO_SIGMAS;

/// OKS between two predicted skeletons with `area` as the object scale:
/// the mean over all keypoints of `exp(-d² / (2 · area · (2σ)²))`.
pub fn skeleton_oks(a: &[(f64, f64)], b: &[(f64, f64)], area: f64) -> f64 {
    let n = a.len().min(b.len()).min(COCO_SIGMAS.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .map(|k| {
            let var = (2.0 * COCO_SIGMAS[k]).powi(2);
            let d2 = (a[k].0 - b[k].0).powi(2) + (a[k].1 - b[k].1).powi(2);
            (-d2 / var / (area + f64::EPSILON) / 2.0).exp()
        })
        .sum();
    sum / n as f64
}

pub fn pose_oks(a: &PosePrediction, b: &PosePrediction, area: f64) -> f64 {
    skeleton_oks(&locations(a), &locations(b), area)
}

pub(crate) fn locations(p: &PosePrediction) -> Vec<(f64, f64)> {
    p.keypoints.iter().map(|k| (k.x, k.y)).collect()
}

/// A skeleton with the score and object area used for suppression.
#[derive(Debug, Clone, PartialEq)]
pub struct NmsCandidate {
    pub keypoints: Vec<(f64, f64)>,
    pub score: f64,
    pub area: f64,
}

/// Greedy suppression by descending score (ties by index): a candidate is
/// dropped when its OKS to an already kept one, at the kept one's area,
/// reaches `oks_threshold`. Returns kept indices in score order.
pub fn pose_nms(cands: &[NmsCandidate], oks_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&i, &j| cands[j].score.total_cmp(&cands[i].score).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let dup = kept
            .iter()
            .any(|&k| skeleton_oks(&cands[k].keypoints, &cands[i].keypoints, cands[k].area) >= oks_threshold);
        if !dup {
            kept.push(i);
        }
    }
    kept
}

/// Greedy one-to-one matching of two pose lists by OKS (areas taken from
/// `prev`); returns the matched OKS values.
pub(crate) fn matched_oks(prev: &[(&PosePrediction, f64)], curr: &[&PosePrediction]) -> Vec<f64> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, (p, area)) in prev.iter().enumerate() {
        for (j, c) in curr.iter().enumerate() {
            pairs.push((i, j, pose_oks(p, c, *area)));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; prev.len()];
    let mut used_c = vec![false; curr.len()];
    let mut out = Vec::new();
    for (i, j, v) in pairs {
        if !used_p[i] && !used_c[j] {
            used_p[i] = true;
            used_c[j] = true;
            out.push(v);
        }
    }
    out
}

/// Same instance count and mean matched OKS of at least `1 - tol`.
pub(crate) fn poses_converged(prev: &[(&PosePrediction, f64)], curr: &[&PosePrediction], tol: f64) -> bool {
    if prev.len() != curr.len() {
        return false;
    }
    if prev.is_empty() {
        return true;
    }
    let m = matched_oks(prev, curr);
    m.iter().sum::<f64>() / m.len() as f64 >= 1.0 - tol
}
