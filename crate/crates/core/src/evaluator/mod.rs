//! COCO-style evaluation: similarity, greedy matching, and AP/AR accumulation.
//!
//! The protocol mirrors the reference COCO evaluator: predictions are ordered
//! by score per image and capped at `max_dets`, GTs flagged ignore/crowd or
//! outside the area range can absorb predictions without counting, and AP is
//! the mean 101-point interpolated precision over thresholds 0.50:0.05:0.95.

mod accumulate;
mod matching;
mod oks;
mod report;

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco_io::{
    keypoint_extent, rasterize_polygon, AnnotationSet, Instance, Keypoint, PredictedKeypoint, Prediction,
    PredictionSet, RleMask,
};
use crate::geometry::{bbox_iou_unchecked, mask_iou, BBox};

pub use accumulate::{average_precision, coco_thresholds, linspace, recall_points, PrCurve};
pub use matching::{match_greedy, MatchOutcome};
pub use oks::{oks, pose_score};
pub use report::{read_summary_csv, write_matching_log, write_summary_csv, write_summary_json, SUMMARY_FIELDS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("GT instance {0} has no labeled keypoints; OKS is undefined")]
    UndefinedSimilarity(u64),
    #[error("keypoint count mismatch: expected {expected}, got {got}")]
    KeypointCount { expected: usize, got: usize },
    #[error("category {0} has no keypoint sigmas; keypoint evaluation needs per-keypoint constants")]
    MissingSigmas(u64),
    #[error("prediction {id} has no {task} payload")]
    MissingPayload { id: u64, task: &'static str },
}

/// Which similarity drives matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    #[serde(rename = "bbox")]
    BboxIoU,
    #[serde(rename = "segm")]
    MaskIoU,
    #[serde(rename = "keypoints")]
    Oks,
}

impl SimilarityKind {
    pub fn task_name(&self) -> &'static str {
        match self {
            SimilarityKind::BboxIoU => "bbox",
            SimilarityKind::MaskIoU => "segm",
            SimilarityKind::Oks => "keypoints",
        }
    }

    pub fn iou_mode(&self) -> &'static str {
        match self {
            SimilarityKind::BboxIoU => "bbox",
            SimilarityKind::MaskIoU => "mask",
            SimilarityKind::Oks => "oks",
        }
    }

    pub fn default_max_dets(&self) -> usize {
        match self {
            SimilarityKind::Oks => 20,
            _ => 100,
        }
    }

    /// Named area ranges in px²; "all" first.
    pub fn area_ranges(&self) -> Vec<(&'static str, [f64; 2])> {
        let all = ("all", [0.0, 1e10]);
        let small = ("small", [0.0, 32.0 * 32.0]);
        let medium = ("medium", [32.0 * 32.0, 96.0 * 96.0]);
        let large = ("large", [96.0 * 96.0, 1e10]);
        match self {
            SimilarityKind::Oks => vec![all, medium, large],
            _ => vec![all, small, medium, large],
        }
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bbox" => Ok(SimilarityKind::BboxIoU),
            "segm" | "mask" => Ok(SimilarityKind::MaskIoU),
            "keypoints" | "kpt" | "oks" => Ok(SimilarityKind::Oks),
            other => Err(format!("unknown task `{other}` (expected bbox, segm or keypoints)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Restrict evaluation to these category ids.
    pub category_ids: Option<Vec<u64>>,
    pub max_dets: Option<usize>,
    pub thresholds: Vec<f64>,
    pub matching_log: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { category_ids: None, max_dets: None, thresholds: coco_thresholds(), matching_log: true }
    }
}

/// Matching of one (image, category, area range) cell at every threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub image_id: u64,
    pub category_id: u64,
    pub area_index: usize,
    /// Prediction ids in descending score order, capped at max_dets.
    pub dt_ids: Vec<u64>,
    pub dt_scores: Vec<f64>,
    /// GT ids, non-ignored first.
    pub gt_ids: Vec<u64>,
    pub gt_ignore: Vec<bool>,
    /// `[threshold][det]` matched GT id, if any.
    pub dt_matches: Vec<Vec<Option<u64>>>,
    pub dt_ignore: Vec<Vec<bool>>,
    /// `[threshold][det]` similarity to the assigned GT (0 for false positives).
    pub dt_similarity: Vec<Vec<f64>>,
}

/// One line of the matching log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub image_id: u64,
    pub prediction_id: u64,
    pub score: f64,
    pub threshold: f64,
    /// `tp`, `fp`, or `ignored`.
    pub outcome: String,
    pub gt_id: Option<u64>,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub area: String,
    pub ap: f64,
    pub ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: SimilarityKind,
    /// False when no non-ignored GT was in scope; summary values are then -1.
    pub defined: bool,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub by_area: Vec<AreaSummary>,
    pub thresholds: Vec<f64>,
    /// `[threshold][recall point]` for area "all", averaged over categories.
    pub precision: Vec<Vec<f64>>,
    /// `[threshold]` for area "all", averaged over categories.
    pub recall: Vec<f64>,
    pub n_images: usize,
    pub n_gts: usize,
    pub n_preds: usize,
    pub matching_log: Vec<MatchRecord>,
}

impl EvalReport {
    pub fn iou_mode(&self) -> &'static str {
        self.task.iou_mode()
    }

    /// AP at a single threshold, if that threshold was evaluated.
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        let t = self.thresholds.iter().position(|&x| (x - threshold).abs() < 1e-12)?;
        Some(accumulate::defined_mean(self.precision[t].iter()))
    }
}

enum Payload<'a> {
    Boxes(Vec<BBox>),
    Masks(Vec<Option<RleMask>>),
    Keypoints(Vec<&'a [PredictedKeypoint]>),
}

/// Area used for the area-range filter of unmatched predictions; follows the
/// reference results loader (box area when a box is present).
fn prediction_area(p: &Prediction) -> f64 {
    if let Some(b) = p.bbox {
        b.area()
    } else if let Some(m) = &p.mask {
        m.area() as f64
    } else if let Some(k) = &p.keypoints {
        let kps: Vec<Keypoint> = k.iter().map(|k| Keypoint::new(k.x, k.y, 2)).collect();
        if kps.is_empty() {
            0.0
        } else {
            keypoint_extent(&kps).area()
        }
    } else {
        0.0
    }
}

fn prediction_bbox(p: &Prediction) -> Option<BBox> {
    p.bbox.or_else(|| p.mask.as_ref().and_then(|m| m.bbox()).map(BBox::from)).or_else(|| {
        p.keypoints.as_ref().filter(|k| !k.is_empty()).map(|k| {
            let kps: Vec<Keypoint> = k.iter().map(|k| Keypoint::new(k.x, k.y, 2)).collect();
            keypoint_extent(&kps)
        })
    })
}

fn prediction_mask(p: &Prediction, size: Option<(u32, u32)>) -> Option<RleMask> {
    if let Some(m) = &p.mask {
        return Some(m.clone());
    }
    let (h, w) = size?;
    let b = p.bbox?;
    let (x1, y1, x2, y2) = (b.x, b.y, b.x + b.w, b.y + b.h);
    Some(rasterize_polygon(&[x1, y1, x1, y2, x2, y2, x2, y1], h, w))
}

fn similarity_matrix(
    task: SimilarityKind,
    dts: &[&Prediction],
    gts: &[&Instance],
    payload: &Payload,
    sigmas: &[f64],
) -> Vec<Vec<f64>> {
    match (task, payload) {
        (SimilarityKind::BboxIoU, Payload::Boxes(boxes)) => {
            boxes.iter().map(|d| gts.iter().map(|g| bbox_iou_unchecked(d, &g.bbox, g.iscrowd)).collect()).collect()
        }
        (SimilarityKind::MaskIoU, Payload::Masks(masks)) => masks
            .iter()
            .map(|d| {
                gts.iter()
                    .map(|g| match (d, &g.mask) {
                        (Some(d), Some(gm)) => mask_iou(d, gm, g.iscrowd).unwrap_or(0.0),
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect(),
        (SimilarityKind::Oks, Payload::Keypoints(kps)) => oks::oks_matrix(kps, gts, sigmas),
        _ => vec![vec![0.0; gts.len()]; dts.len()],
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    task: SimilarityKind,
    image_id: u64,
    category_id: u64,
    image_size: Option<(u32, u32)>,
    gts: &[&Instance],
    dts_in: &[&Prediction],
    sigmas: &[f64],
    opts_thresholds: &[f64],
    area_ranges: &[(&'static str, [f64; 2])],
    max_det: usize,
) -> Result<Vec<Option<ImageEval>>, EvalError> {
    if gts.is_empty() && dts_in.is_empty() {
        return Ok(vec![None; area_ranges.len()]);
    }
    let mut dts: Vec<&Prediction> = dts_in.to_vec();
    dts.sort_by(|a, b| b.score.total_cmp(&a.score));
    dts.truncate(max_det);

    let payload = match task {
        SimilarityKind::BboxIoU => Payload::Boxes(
            dts.iter()
                .map(|d| prediction_bbox(d).ok_or(EvalError::MissingPayload { id: d.id, task: "bbox" }))
                .collect::<Result<_, _>>()?,
        ),
        SimilarityKind::MaskIoU => {
            let masks: Vec<Option<RleMask>> = dts.iter().map(|d| prediction_mask(d, image_size)).collect();
            for (d, m) in dts.iter().zip(&masks) {
                if m.is_none() && !d.unknown_image {
                    return Err(EvalError::MissingPayload { id: d.id, task: "segm" });
                }
            }
            Payload::Masks(masks)
        }
        SimilarityKind::Oks => Payload::Keypoints(
            dts.iter()
                .map(|d| d.keypoints.as_deref().ok_or(EvalError::MissingPayload { id: d.id, task: "keypoints" }))
                .collect::<Result<_, _>>()?,
        ),
    };
    let sim = similarity_matrix(task, &dts, gts, &payload, sigmas);
    let dt_area: Vec<f64> = dts.iter().map(|d| prediction_area(d)).collect();

    let mut out = Vec::with_capacity(area_ranges.len());
    for (ai, (_, rng)) in area_ranges.iter().enumerate() {
        let base_ignore: Vec<bool> = gts
            .iter()
            .map(|g| {
                let kp_ignore = task == SimilarityKind::Oks && g.num_keypoints == 0;
                g.ignore || g.iscrowd || kp_ignore || g.area < rng[0] || g.area > rng[1]
            })
            .collect();
        let crowd: Vec<bool> = gts.iter().map(|g| g.iscrowd).collect();
        // GTs reordered so non-ignored come first (stable)
        let mut order: Vec<usize> = (0..gts.len()).collect();
        order.sort_by_key(|&g| base_ignore[g]);
        let gt_ignore: Vec<bool> = order.iter().map(|&g| base_ignore[g]).collect();
        let gt_crowd: Vec<bool> = order.iter().map(|&g| crowd[g]).collect();
        let sim_sorted: Vec<Vec<f64>> = sim.iter().map(|row| order.iter().map(|&g| row[g]).collect()).collect();

        let mut dt_matches = Vec::with_capacity(opts_thresholds.len());
        let mut dt_ignore = Vec::with_capacity(opts_thresholds.len());
        let mut dt_similarity = Vec::with_capacity(opts_thresholds.len());
        for &t in opts_thresholds {
            let m = match_greedy(&sim_sorted, &gt_ignore, &gt_crowd, t);
            let mut matches = Vec::with_capacity(dts.len());
            let mut ignore = Vec::with_capacity(dts.len());
            let mut sims = Vec::with_capacity(dts.len());
            for (d, outcome) in m.iter().enumerate() {
                match *outcome {
                    MatchOutcome::Matched { gt, similarity } => {
                        matches.push(Some(gts[order[gt]].id));
                        ignore.push(false);
                        sims.push(similarity);
                    }
                    MatchOutcome::MatchedIgnored { gt, similarity } => {
                        matches.push(Some(gts[order[gt]].id));
                        ignore.push(true);
                        sims.push(similarity);
                    }
                    MatchOutcome::FalsePositive => {
                        matches.push(None);
                        ignore.push(dt_area[d] < rng[0] || dt_area[d] > rng[1]);
                        sims.push(0.0);
                    }
                }
            }
            dt_matches.push(matches);
            dt_ignore.push(ignore);
            dt_similarity.push(sims);
        }
        out.push(Some(ImageEval {
            image_id,
            category_id,
            area_index: ai,
            dt_ids: dts.iter().map(|d| d.id).collect(),
            dt_scores: dts.iter().map(|d| d.score).collect(),
            gt_ids: order.iter().map(|&g| gts[g].id).collect(),
            gt_ignore,
            dt_matches,
            dt_ignore,
            dt_similarity,
        }));
    }
    Ok(out)
}

/// Evaluates `preds` against `gts` for one task.
pub fn evaluate(
    preds: &PredictionSet,
    gts: &AnnotationSet,
    task: SimilarityKind,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut preds = preds.clone();
    preds.resolve(gts);

    let mut cat_ids: Vec<u64> = gts.categories.iter().map(|c| c.id).collect();
    if cat_ids.is_empty() {
        cat_ids = gts.instances.iter().map(|i| i.category_id).collect::<BTreeSet<_>>().into_iter().collect();
    }
    cat_ids.sort_unstable();
    cat_ids.dedup();
    if let Some(filter) = &options.category_ids {
        cat_ids.retain(|c| filter.contains(c));
    }

    let mut sigmas: HashMap<u64, Vec<f64>> = HashMap::new();
    if task == SimilarityKind::Oks {
        for &c in &cat_ids {
            let s = gts.category(c).and_then(|cat| cat.effective_sigmas()).ok_or(EvalError::MissingSigmas(c))?;
            sigmas.insert(c, s);
        }
    }

    let in_scope = |i: &Instance| -> bool {
        cat_ids.contains(&i.category_id) && !(task == SimilarityKind::MaskIoU && i.mask.is_none())
    };
    let mut gt_by_cell: HashMap<(u64, u64), Vec<&Instance>> = HashMap::new();
    for inst in gts.instances.iter().filter(|i| in_scope(i)) {
        gt_by_cell.entry((inst.image_id, inst.category_id)).or_default().push(inst);
    }
    let mut dt_by_cell: HashMap<(u64, u64), Vec<&Prediction>> = HashMap::new();
    for p in preds.predictions.iter().filter(|p| cat_ids.contains(&p.category_id)) {
        dt_by_cell.entry((p.image_id, p.category_id)).or_default().push(p);
    }

    // GT images in ascending id order, then images only predictions reference
    let mut image_ids: Vec<u64> = gts.images.iter().map(|i| i.id).collect::<BTreeSet<_>>().into_iter().collect();
    let extra: BTreeSet<u64> = preds.predictions.iter().filter(|p| p.unknown_image).map(|p| p.image_id).collect();
    image_ids.extend(extra);
    let sizes: HashMap<u64, (u32, u32)> = gts.images.iter().map(|i| (i.id, (i.height, i.width))).collect();

    let max_det = options.max_dets.unwrap_or_else(|| task.default_max_dets());
    let area_ranges = task.area_ranges();
    let thresholds = &options.thresholds;
    let empty_sigmas: Vec<f64> = Vec::new();

    let cells: Vec<(u64, u64)> = cat_ids.iter().flat_map(|&c| image_ids.iter().map(move |&i| (c, i))).collect();
    let evaluated: Vec<Vec<Option<ImageEval>>> = cells
        .par_iter()
        .map(|&(c, i)| {
            let g = gt_by_cell.get(&(i, c)).map(|v| v.as_slice()).unwrap_or(&[]);
            let d = dt_by_cell.get(&(i, c)).map(|v| v.as_slice()).unwrap_or(&[]);
            let s = sigmas.get(&c).unwrap_or(&empty_sigmas);
            evaluate_cell(task, i, c, sizes.get(&i).copied(), g, d, s, thresholds, &area_ranges, max_det)
        })
        .collect::<Result<_, _>>()?;

    // curves per (category, area)
    let n_t = thresholds.len();
    let mut curves: Vec<Vec<PrCurve>> = Vec::with_capacity(cat_ids.len());
    for (ci, _) in cat_ids.iter().enumerate() {
        let mut per_area = Vec::with_capacity(area_ranges.len());
        for ai in 0..area_ranges.len() {
            let group: Vec<&ImageEval> = evaluated[ci * image_ids.len()..(ci + 1) * image_ids.len()]
                .iter()
                .filter_map(|cell| cell[ai].as_ref())
                .collect();
            per_area.push(average_precision(&group, n_t, max_det));
        }
        curves.push(per_area);
    }

    let summarize_ap = |ai: usize, t: Option<usize>| -> f64 {
        accumulate::defined_mean(curves.iter().flat_map(|c| {
            c[ai]
                .precision
                .iter()
                .enumerate()
                .filter(move |(ti, _)| t.is_none_or(|t| *ti == t))
                .flat_map(|(_, r)| r.iter())
        }))
    };
    let summarize_ar = |ai: usize| -> f64 { accumulate::defined_mean(curves.iter().flat_map(|c| c[ai].recall.iter())) };
    let t_index = |v: f64| thresholds.iter().position(|&x| (x - v).abs() < 1e-12);

    let ap = summarize_ap(0, None);
    let defined = ap > -1.0;
    let ap50 = t_index(0.5).map(|t| summarize_ap(0, Some(t))).unwrap_or(-1.0);
    let ap75 = t_index(0.75).map(|t| summarize_ap(0, Some(t))).unwrap_or(-1.0);
    let ar = summarize_ar(0);
    let by_area = area_ranges
        .iter()
        .enumerate()
        .map(|(ai, (name, _))| AreaSummary { area: name.to_string(), ap: summarize_ap(ai, None), ar: summarize_ar(ai) })
        .collect();

    let rp = recall_points().len();
    let precision: Vec<Vec<f64>> = (0..n_t)
        .map(|t| (0..rp).map(|r| accumulate::defined_mean(curves.iter().map(|c| &c[0].precision[t][r]))).collect())
        .collect();
    let recall: Vec<f64> = (0..n_t).map(|t| accumulate::defined_mean(curves.iter().map(|c| &c[0].recall[t]))).collect();

    let mut matching_log = Vec::new();
    if options.matching_log {
        for cell in &evaluated {
            let Some(e) = cell[0].as_ref() else { continue };
            for (d, &pid) in e.dt_ids.iter().enumerate() {
                for (t, &thr) in thresholds.iter().enumerate() {
                    let outcome = match (e.dt_matches[t][d], e.dt_ignore[t][d]) {
                        (_, true) => "ignored",
                        (Some(_), false) => "tp",
                        (None, false) => "fp",
                    };
                    matching_log.push(MatchRecord {
                        image_id: e.image_id,
                        prediction_id: pid,
                        score: e.dt_scores[d],
                        threshold: thr,
                        outcome: outcome.to_string(),
                        gt_id: e.dt_matches[t][d],
                        similarity: e.dt_similarity[t][d],
                    });
                }
            }
        }
    }

    let n_gts = gts.instances.iter().filter(|i| in_scope(i)).count();
    let n_preds = preds.predictions.iter().filter(|p| cat_ids.contains(&p.category_id)).count();
    Ok(EvalReport {
        task,
        defined,
        ap,
        ap50,
        ap75,
        ar,
        by_area,
        thresholds: thresholds.clone(),
        precision,
        recall,
        n_images: gts.images.len(),
        n_gts,
        n_preds,
        matching_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco_io::{Category, ImageInfo};

    fn gt_set() -> AnnotationSet {
        let mut set = AnnotationSet { categories: vec![Category::coco_person()], ..Default::default() };
        set.images.push(ImageInfo::new(1, 100, 100, "a.png"));
        let kps: Vec<Keypoint> = (0..17).map(|k| Keypoint::new(10.0 + k as f64 * 3.0, 20.0 + k as f64, 2)).collect();
        let bbox = BBox::new(10.0, 10.0, 60.0, 40.0);
        set.instances.push(Instance::new(1, 1, bbox).with_mask(bbox.to_rle(100, 100)).with_keypoints(kps));
        set
    }

    fn gt_as_prediction(set: &AnnotationSet) -> PredictionSet {
        PredictionSet::new(
            set.instances
                .iter()
                .map(|i| {
                    Prediction::new(i.image_id, 1.0)
                        .with_bbox(i.bbox)
                        .with_mask(i.mask.clone().unwrap())
                        .with_keypoints(
                            i.keypoints.iter().map(|k| PredictedKeypoint { x: k.x, y: k.y, score: 1.0 }).collect(),
                        )
                })
                .collect(),
        )
    }

    #[test]
    fn perfect_prediction_scores_one_on_all_tasks() {
        let gt = gt_set();
        let preds = gt_as_prediction(&gt);
        for task in [SimilarityKind::BboxIoU, SimilarityKind::MaskIoU, SimilarityKind::Oks] {
            let r = evaluate(&preds, &gt, task, &EvalOptions::default()).unwrap();
            assert!(r.defined);
            assert!((r.ap - 1.0).abs() < 1e-12, "{task:?} ap {}", r.ap);
            assert!(r.precision.iter().all(|row| row.iter().all(|&p| (p - 1.0).abs() < 1e-12)));
        }
    }

    #[test]
    fn no_predictions_is_zero() {
        let gt = gt_set();
        let r = evaluate(&PredictionSet::default(), &gt, SimilarityKind::Oks, &EvalOptions::default()).unwrap();
        assert!(r.defined);
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn no_gt_is_undefined() {
        let mut gt = gt_set();
        gt.instances.clear();
        let r = evaluate(&PredictionSet::default(), &gt, SimilarityKind::BboxIoU, &EvalOptions::default()).unwrap();
        assert!(!r.defined);
        assert_eq!(r.ap, -1.0);
    }

    #[test]
    fn keypoint_only_gt_excluded_from_segm() {
        let mut gt = gt_set();
        let bbox = BBox::new(70.0, 60.0, 20.0, 30.0);
        let mut extra =
            Instance::new(2, 1, bbox).with_keypoints((0..17).map(|_| Keypoint::new(80.0, 70.0, 2)).collect());
        extra.keypoints_only = true;
        gt.instances.push(extra);
        let preds = gt_as_prediction(&set_without(&gt, 2));
        let segm = evaluate(&preds, &gt, SimilarityKind::MaskIoU, &EvalOptions::default()).unwrap();
        assert_eq!(segm.n_gts, 1);
        assert!((segm.ap - 1.0).abs() < 1e-12);
        let kp = evaluate(&preds, &gt, SimilarityKind::Oks, &EvalOptions::default()).unwrap();
        assert_eq!(kp.n_gts, 2);
        assert!(kp.ap < 1.0);
    }

    fn set_without(set: &AnnotationSet, id: u64) -> AnnotationSet {
        let mut s = set.clone();
        s.instances.retain(|i| i.id != id);
        s
    }

    #[test]
    fn missing_sigmas_is_an_error() {
        let mut gt = gt_set();
        gt.categories[0].keypoints.clear();
        gt.categories[0].sigmas = None;
        gt.instances[0].keypoints.clear();
        let preds = gt_as_prediction(&gt_set());
        assert!(matches!(
            evaluate(&preds, &gt, SimilarityKind::Oks, &EvalOptions::default()),
            Err(EvalError::MissingSigmas(1))
        ));
    }

    #[test]
    fn payload_mismatch_is_an_error() {
        let gt = gt_set();
        let preds = PredictionSet::new(vec![Prediction::new(1, 0.5).with_bbox(BBox::new(0.0, 0.0, 5.0, 5.0))]);
        assert!(matches!(
            evaluate(&preds, &gt, SimilarityKind::Oks, &EvalOptions::default()),
            Err(EvalError::MissingPayload { .. })
        ));
    }

    #[test]
    fn unknown_image_prediction_counts_as_false_positive() {
        let gt = gt_set();
        let mut preds = gt_as_prediction(&gt).predictions;
        preds[0].score = 0.5;
        preds.push(Prediction::new(77, 0.9).with_bbox(BBox::new(0.0, 0.0, 5.0, 5.0)));
        let r = evaluate(&PredictionSet::new(preds), &gt, SimilarityKind::BboxIoU, &EvalOptions::default()).unwrap();
        // FP ranked first, then TP: interpolated precision 0.5 at every recall level
        assert!((r.ap - 0.5).abs() < 1e-9, "{}", r.ap);
        assert!(r.matching_log.iter().any(|m| m.image_id == 77 && m.outcome == "fp"));
    }
}
