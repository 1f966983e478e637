use super::ImageEval;

/// `n` evenly spaced values from `start` to `stop` inclusive, computed as
/// `start + i * step` with the last value pinned to `stop`.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (stop - start) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * step + start).collect();
    v[n - 1] = stop;
    v
}

/// COCO thresholds 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, 10)
}

/// 101 recall sample points 0:0.01:1.
pub fn recall_points() -> Vec<f64> {
    linspace(0.0, 1.0, 101)
}

/// Interpolated precision and final recall for one group of per-image
/// evaluations (one category, one area range).
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `[threshold][recall point]`; all `-1` when the group has no non-ignored GT.
    pub precision: Vec<Vec<f64>>,
    /// `[threshold]`; `-1` when undefined.
    pub recall: Vec<f64>,
}

/// Accumulates matches into 101-point interpolated precision per threshold.
///
/// Detections from all images are pooled and ordered by descending score
/// (stable in image order), cumulative TP/FP counts give the raw curve,
/// precision is made monotone from the right, and sampled at the first
/// recall index reaching each recall point.
pub fn average_precision(evals: &[&ImageEval], n_thresholds: usize, max_det: usize) -> PrCurve {
    let rec_thrs = recall_points();
    let undefined =
        PrCurve { precision: vec![vec![-1.0; rec_thrs.len()]; n_thresholds], recall: vec![-1.0; n_thresholds] };
    let n_pos: usize = evals.iter().map(|e| e.gt_ignore.iter().filter(|&&ig| !ig).count()).sum();
    if n_pos == 0 {
        return undefined;
    }
    // (score, image slot, det index)
    let mut dets: Vec<(f64, usize, usize)> = Vec::new();
    for (ei, e) in evals.iter().enumerate() {
        for d in 0..e.dt_scores.len().min(max_det) {
            dets.push((e.dt_scores[d], ei, d));
        }
    }
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut precision = Vec::with_capacity(n_thresholds);
    let mut recall = Vec::with_capacity(n_thresholds);
    for t in 0..n_thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut rc = Vec::with_capacity(dets.len());
        let mut pr = Vec::with_capacity(dets.len());
        for &(_, ei, d) in &dets {
            let e = evals[ei];
            if e.dt_ignore[t][d] {
                // ignored detections keep the cumulative counts unchanged
            } else if e.dt_matches[t][d].is_some() {
                tp += 1;
            } else {
                fp += 1;
            }
            rc.push(tp as f64 / n_pos as f64);
            pr.push(tp as f64 / (fp as f64 + tp as f64 + f64::EPSILON));
        }
        recall.push(rc.last().copied().unwrap_or(0.0));
        for i in (1..pr.len()).rev() {
            if pr[i] > pr[i - 1] {
                pr[i - 1] = pr[i];
            }
        }
        let mut q = vec![0.0; rec_thrs.len()];
        for (ri, &r) in rec_thrs.iter().enumerate() {
            let idx = rc.partition_point(|&x| x < r);
            if idx >= pr.len() {
                break;
            }
            q[ri] = pr[idx];
        }
        precision.push(q);
    }
    PrCurve { precision, recall }
}

/// Mean of entries greater than -1, or -1 when none.
pub(crate) fn defined_mean<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (s, n) = values.filter(|&&v| v > -1.0).fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    if n == 0 {
        -1.0
    } else {
        s / n as f64
    }
}
