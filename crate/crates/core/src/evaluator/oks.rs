use super::EvalError;
use crate::coco_io::{Instance, PredictedKeypoint};
use crate::loop_engine::PosePrediction;

/// Object keypoint similarity of a predicted skeleton against one GT instance:
/// the mean over labeled GT keypoints of `exp(-d² / (2 · area · (2σ)²))`.
pub fn oks(pred: &[PredictedKeypoint], gt: &Instance, sigmas: &[f64]) -> Result<f64, EvalError> {
    if sigmas.len() != gt.keypoints.len() || pred.len() != gt.keypoints.len() {
        return Err(EvalError::KeypointCount { expected: gt.keypoints.len(), got: pred.len().min(sigmas.len()) });
    }
    if gt.labeled_keypoints() == 0 {
        return Err(EvalError::UndefinedSimilarity(gt.id));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), s) in pred.iter().zip(&gt.keypoints).zip(sigmas) {
        if !g.is_labeled() {
            continue;
        }
        let var = (2.0 * s).powi(2);
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        sum += (-d2 / var / (gt.area + f64::EPSILON) / 2.0).exp();
        n += 1;
    }
    Ok(sum / n as f64)
}

/// OKS between every prediction and every GT with the reference evaluator's
/// conventions, including its fallback for GTs without labeled keypoints
/// (distance to a box tripled around the GT box). Such GTs are always
/// ignore-flagged, so the fallback only decides which predictions they absorb.
pub(crate) fn oks_matrix(preds: &[&[PredictedKeypoint]], gts: &[&Instance], sigmas: &[f64]) -> Vec<Vec<f64>> {
    let vars: Vec<f64> = sigmas.iter().map(|s| (2.0 * s).powi(2)).collect();
    let k = sigmas.len();
    let mut out = vec![vec![0.0; gts.len()]; preds.len()];
    for (j, gt) in gts.iter().enumerate() {
        if gt.keypoints.len() != k {
            continue;
        }
        let labeled = gt.labeled_keypoints();
        let b = gt.bbox;
        let (x0, x1) = (b.x - b.w, b.x + b.w * 2.0);
        let (y0, y1) = (b.y - b.h, b.y + b.h * 2.0);
        for (i, dt) in preds.iter().enumerate() {
            if dt.len() != k {
                continue;
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for kk in 0..k {
                let g = &gt.keypoints[kk];
                let d = &dt[kk];
                let (dx, dy) = if labeled > 0 {
                    if !g.is_labeled() {
                        continue;
                    }
                    (d.x - g.x, d.y - g.y)
                } else {
                    ((x0 - d.x).max(0.0) + (d.x - x1).max(0.0), (y0 - d.y).max(0.0) + (d.y - y1).max(0.0))
                };
                let e = (dx * dx + dy * dy) / vars[kk] / (gt.area + f64::EPSILON) / 2.0;
                sum += (-e).exp();
                n += 1;
            }
            out[i][j] = if n > 0 { sum / n as f64 } else { 0.0 };
        }
    }
    out
}

/// Instance confidence: mean expected OKS over keypoints whose presence
/// probability reaches `presence_cutoff`; 0 when none does.
pub fn pose_score(pred: &PosePrediction, presence_cutoff: f64) -> f64 {
    let (sum, n) = pred
        .keypoints
        .iter()
        .filter(|k| k.presence >= presence_cutoff)
        .fold((0.0, 0usize), |(s, n), k| (s + k.expected_oks, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
