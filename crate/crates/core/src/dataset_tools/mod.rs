//! Crowd-dataset statistics, the legacy IoUMax filter, histogram export and
//! annotation merging.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco_io::{AnnotationSet, Instance, PredictedKeypoint};
use crate::evaluator::oks;
use crate::geometry::{iou_max, IouMode, IouModePolicy};

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("annotation set has no instances")]
    Empty,
    #[error("additions reference images missing from the base set: instance ids {0:?}")]
    UnknownImage(Vec<u64>),
    #[error("histogram file: {0}")]
    Histogram(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_images: usize,
    pub n_instances: usize,
    /// Instances with at least one labeled keypoint.
    pub n_keypoint_instances: usize,
    pub n_mask_instances: usize,
    pub mean_ioumax: f64,
    /// Fractions per 0.05-wide bin; half-open except the last, which is closed at 1.
    pub ioumax_histogram: Vec<f64>,
    /// Mask when every image used masks, bbox otherwise.
    pub iou_mode: IouMode,
    /// Mean IoUMax over the instances of images evaluated in each mode.
    pub mean_ioumax_by_mode: BTreeMap<String, f64>,
}

/// Lower bin edge `k / 20`, written so that edges match decimal literals exactly.
pub fn bin_edge(k: usize) -> f64 {
    k as f64 / HISTOGRAM_BINS as f64
}

pub fn bin_index(v: f64) -> usize {
    (1..HISTOGRAM_BINS).take_while(|&k| v >= bin_edge(k)).count()
}

pub fn histogram(values: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; HISTOGRAM_BINS];
    if values.is_empty() {
        return h;
    }
    for &v in values {
        h[bin_index(v)] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// IoUMax of every instance, in instance order, with the mode used per instance.
pub fn instance_ioumax(set: &AnnotationSet, policy: IouModePolicy) -> Vec<(f64, IouMode)> {
    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, inst) in set.instances.iter().enumerate() {
        by_image.entry(inst.image_id).or_default().push(i);
    }
    let mut out = vec![(0.0, IouMode::Bbox); set.instances.len()];
    for idx in by_image.values() {
        let insts: Vec<&Instance> = idx.iter().map(|&i| &set.instances[i]).collect();
        let r = iou_max(&insts, policy);
        for (&i, v) in idx.iter().zip(r.values) {
            out[i] = (v, r.mode);
        }
    }
    out
}

pub fn compute_stats(set: &AnnotationSet, policy: IouModePolicy) -> Result<DatasetStats, DatasetError> {
    if set.instances.is_empty() {
        return Err(DatasetError::Empty);
    }
    let ious = instance_ioumax(set, policy);
    let values: Vec<f64> = ious.iter().map(|x| x.0).collect();
    let mut by_mode: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (v, m) in &ious {
        let e = by_mode.entry(mode_name(*m).to_string()).or_default();
        e.0 += v;
        e.1 += 1;
    }
    let iou_mode = if ious.iter().all(|x| x.1 == IouMode::Mask) { IouMode::Mask } else { IouMode::Bbox };
    Ok(DatasetStats {
        n_images: set.images.len(),
        n_instances: set.instances.len(),
        n_keypoint_instances: set.instances.iter().filter(|i| i.num_keypoints > 0).count(),
        n_mask_instances: set.instances.iter().filter(|i| i.mask.is_some()).count(),
        mean_ioumax: values.iter().sum::<f64>() / values.len() as f64,
        ioumax_histogram: histogram(&values),
        iou_mode,
        mean_ioumax_by_mode: by_mode.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    })
}

fn mode_name(m: IouMode) -> &'static str {
    match m {
        IouMode::Mask => "mask",
        IouMode::Bbox => "bbox",
    }
}

/// Keeps instances with IoUMax = 0 or IoUMax > 0.5, where IoUMax is measured
/// against the full, unfiltered instance list of each image.
pub fn apply_legacy_filter(set: &AnnotationSet, policy: IouModePolicy) -> AnnotationSet {
    let ious = instance_ioumax(set, policy);
    filter_with_ioumax(set, &ious.iter().map(|x| x.0).collect::<Vec<_>>())
}

/// The legacy rule applied with precomputed (frozen) IoUMax values.
pub fn filter_with_ioumax(set: &AnnotationSet, ioumax: &[f64]) -> AnnotationSet {
    let mut out = set.clone();
    out.instances =
        set.instances.iter().zip(ioumax).filter(|(_, &v)| v == 0.0 || v > 0.5).map(|(i, _)| i.clone()).collect();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergePolicy {
    /// An addition whose OKS against an existing instance reaches this value is a duplicate.
    pub dedup_oks_threshold: f64,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self { dedup_oks_threshold: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duplicate {
    pub addition_id: u64,
    pub existing_id: u64,
    pub oks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub n_base: usize,
    pub n_additions: usize,
    pub n_added: usize,
    pub duplicates: Vec<Duplicate>,
    /// Fresh id assigned to each accepted addition, keyed by its original id.
    pub id_map: Vec<(u64, u64)>,
}

/// Adds keypoint annotations to `base`. Accepted additions receive fresh ids
/// above the current maximum, lose any mask, and are marked `keypoints_only`
/// so segmentation evaluation skips them.
pub fn merge_annotations(
    base: &AnnotationSet,
    additions: &AnnotationSet,
    policy: &MergePolicy,
) -> Result<(AnnotationSet, MergeReport), DatasetError> {
    let images: HashSet<u64> = base.images.iter().map(|i| i.id).collect();
    let unknown: Vec<u64> =
        additions.instances.iter().filter(|i| !images.contains(&i.image_id)).map(|i| i.id).collect();
    if !unknown.is_empty() {
        return Err(DatasetError::UnknownImage(unknown));
    }
    let mut out = base.clone();
    let mut next_id = base.max_instance_id().max(additions.max_instance_id()) + 1;
    let mut report = MergeReport {
        n_base: base.instances.len(),
        n_additions: additions.instances.len(),
        n_added: 0,
        duplicates: Vec::new(),
        id_map: Vec::new(),
    };
    for add in &additions.instances {
        let sigmas = base
            .category(add.category_id)
            .or_else(|| additions.category(add.category_id))
            .and_then(|c| c.effective_sigmas())
            .unwrap_or_else(|| crate::COCO_SIGMAS.to_vec());
        let pred: Vec<PredictedKeypoint> =
            add.keypoints.iter().map(|k| PredictedKeypoint { x: k.x, y: k.y, score: 1.0 }).collect();
        let best = out
            .instances
            .iter()
            .filter(|e| e.image_id == add.image_id && e.category_id == add.category_id)
            .filter_map(|e| oks(&pred, e, &sigmas).ok().map(|s| (e.id, s)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((existing_id, s)) = best {
            if s >= policy.dedup_oks_threshold {
                report.duplicates.push(Duplicate { addition_id: add.id, existing_id, oks: s });
                continue;
            }
        }
        let mut inst = add.clone();
        report.id_map.push((add.id, next_id));
        inst.id = next_id;
        next_id += 1;
        inst.mask = None;
        inst.keypoints_only = true;
        inst.ignore = false;
        out.instances.push(inst);
        report.n_added += 1;
    }
    Ok((out, report))
}

/// Writes `bin_low,bin_high,fraction` rows.
pub fn export_histogram<W: Write>(stats: &DatasetStats, w: W) -> Result<(), DatasetError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_low", "bin_high", "fraction"])?;
    for (k, f) in stats.ioumax_histogram.iter().enumerate() {
        out.write_record([bin_edge(k).to_string(), bin_edge(k + 1).to_string(), f.to_string()])?;
    }
    out.flush().map_err(|e| DatasetError::Histogram(e.to_string()))?;
    Ok(())
}

pub fn read_histogram<R: Read>(r: R) -> Result<Vec<(f64, f64, f64)>, DatasetError> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(r).deserialize() {
        let row: (f64, f64, f64) = rec?;
        rows.push(row);
    }
    if rows.len() != HISTOGRAM_BINS {
        return Err(DatasetError::Histogram(format!("expected {HISTOGRAM_BINS} rows, got {}", rows.len())));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coco_io::{Category, ImageInfo, Keypoint};
    use crate::geometry::BBox;

    fn set_with_boxes(boxes: &[(u64, BBox)]) -> AnnotationSet {
        let mut s = AnnotationSet { categories: vec![Category::coco_person()], ..Default::default() };
        let mut imgs: Vec<u64> = boxes.iter().map(|b| b.0).collect();
        imgs.dedup();
        s.images = imgs.iter().map(|&i| ImageInfo::new(i, 200, 200, "x")).collect();
        for (k, (img, b)) in boxes.iter().enumerate() {
            let kps = (0..17).map(|j| Keypoint::new(b.x + j as f64, b.y + j as f64, 2)).collect();
            s.instances.push(Instance::new(k as u64 + 1, *img, *b).with_keypoints(kps));
        }
        s
    }

    #[test]
    fn bins_are_half_open_with_closed_end() {
        assert_eq!(bin_index(0.0), 0);
        assert_eq!(bin_index(0.049_999), 0);
        assert_eq!(bin_index(0.05), 1);
        assert_eq!(bin_index(0.15), 3);
        assert_eq!(bin_index(0.5), 10);
        assert_eq!(bin_index(0.999), 19);
        assert_eq!(bin_index(1.0), 19);
    }

    #[test]
    fn single_instance_stats() {
        let s = set_with_boxes(&[(1, BBox::new(0.0, 0.0, 10.0, 10.0))]);
        let st = compute_stats(&s, IouModePolicy::Bbox).unwrap();
        assert_eq!(st.mean_ioumax, 0.0);
        assert_eq!(st.ioumax_histogram[0], 1.0);
        assert_eq!(st.n_keypoint_instances, 1);
        assert!(matches!(compute_stats(&AnnotationSet::default(), IouModePolicy::Bbox), Err(DatasetError::Empty)));
    }

    #[test]
    fn legacy_filter_rule() {
        // image 1: IoU 1/7 pair (removed); image 2: identical pair (kept); image 3: singleton (kept)
        let s = set_with_boxes(&[
            (1, BBox::new(0.0, 0.0, 2.0, 2.0)),
            (1, BBox::new(1.0, 1.0, 2.0, 2.0)),
            (2, BBox::new(5.0, 5.0, 4.0, 4.0)),
            (2, BBox::new(5.0, 5.0, 4.0, 4.0)),
            (3, BBox::new(0.0, 0.0, 3.0, 3.0)),
        ]);
        let f = apply_legacy_filter(&s, IouModePolicy::Bbox);
        let ids: Vec<u64> = f.instances.iter().map(|i| i.id).collect();
        assert_eq!(ids, vec![3, 4, 5]);
    }

    #[test]
    fn merge_suppresses_duplicates_and_assigns_fresh_ids() {
        let base = set_with_boxes(&[(1, BBox::new(10.0, 10.0, 40.0, 60.0))]);
        let mut additions = base.clone();
        // exact duplicate (OKS 1) and one new person elsewhere
        let mut new_person = additions.instances[0].clone();
        new_person.id = 7;
        for k in &mut new_person.keypoints {
            k.x += 100.0;
        }
        additions.instances.push(new_person);
        let (merged, report) = merge_annotations(&base, &additions, &MergePolicy::default()).unwrap();
        assert_eq!(report.duplicates.len(), 1);
        assert_eq!(report.n_added, 1);
        assert_eq!(merged.instances.len(), 2);
        let added = &merged.instances[1];
        assert_eq!(added.id, 8);
        assert!(added.keypoints_only && added.mask.is_none());
    }

    #[test]
    fn merge_rejects_unknown_images() {
        let base = set_with_boxes(&[(1, BBox::new(0.0, 0.0, 5.0, 5.0))]);
        let additions = set_with_boxes(&[(9, BBox::new(0.0, 0.0, 5.0, 5.0))]);
        assert!(matches!(
            merge_annotations(&base, &additions, &MergePolicy::default()),
            Err(DatasetError::UnknownImage(ids)) if ids == vec![1]
        ));
    }

    #[test]
    fn histogram_csv_round_trip() {
        let s = set_with_boxes(&[
            (1, BBox::new(0.0, 0.0, 2.0, 2.0)),
            (1, BBox::new(1.0, 1.0, 2.0, 2.0)),
            (2, BBox::new(0.0, 0.0, 3.0, 3.0)),
        ]);
        let st = compute_stats(&s, IouModePolicy::Bbox).unwrap();
        let mut buf = Vec::new();
        export_histogram(&st, &mut buf).unwrap();
        let rows = read_histogram(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 20);
        assert_eq!(rows.iter().map(|r| r.2).collect::<Vec<_>>(), st.ioumax_histogram);
        assert!((rows.iter().map(|r| r.2).sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(rows[3], (0.15, 0.2, st.ioumax_histogram[3]));
    }
}
