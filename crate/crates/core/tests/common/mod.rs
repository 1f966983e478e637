#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use bmploop::coco_io::{serialize_annotation_set, serialize_prediction_set, AnnotationSet, PredictionSet};
use bmploop::evaluator::{EvalReport, SimilarityKind};
use bmploop::loop_engine::StageConfig;
use bmploop::model_stages::{CorruptionProfile, StageSet};
use bmploop::simulate::run_batch;
use bmploop::synthetic_world::{make_dataset, DropRule, WorldConfig};
use serde::Deserialize;

pub const TASKS: [SimilarityKind; 3] = [SimilarityKind::BboxIoU, SimilarityKind::MaskIoU, SimilarityKind::Oks];

fn script() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/support/coco_reference.py")
}

/// True when `python3` can import pycocotools.
pub fn reference_available() -> bool {
    Command::new("python3")
        .args(["-c", "import pycocotools.cocoeval"])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

#[derive(Debug, Deserialize)]
struct RawReference {
    stats: Vec<f64>,
    matches: Vec<(u64, u64, usize, u64, bool)>,
}

pub struct Reference {
    pub ap: f64,
    /// `(image, prediction, threshold index) -> (matched gt id or 0, ignored)`
    pub matches: HashMap<(u64, u64, usize), (u64, bool)>,
}

pub fn run_reference(gt: &AnnotationSet, preds: &PredictionSet, task: SimilarityKind) -> Reference {
    let dir = tempfile::tempdir().unwrap();
    let gt_path = dir.path().join("gt.json");
    let dt_path = dir.path().join("dt.json");
    std::fs::write(&gt_path, serialize_annotation_set(gt)).unwrap();
    std::fs::write(&dt_path, serialize_prediction_set(preds)).unwrap();
    let out = Command::new("python3")
        .arg(script())
        .arg(&gt_path)
        .arg(&dt_path)
        .arg(task.task_name())
        .output()
        .expect("python3");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let raw: RawReference = serde_json::from_slice(&out.stdout).unwrap();
    Reference {
        ap: raw.stats[0],
        matches: raw.matches.into_iter().map(|(i, d, t, g, ign)| ((i, d, t), (g, ign))).collect(),
    }
}

/// Fraction of (prediction, threshold) entries whose match and ignore flag agree.
pub fn match_agreement(report: &EvalReport, reference: &Reference) -> f64 {
    let ours: HashMap<(u64, u64, usize), (u64, bool)> = report
        .matching_log
        .iter()
        .map(|m| {
            let t = report.thresholds.iter().position(|&x| x == m.threshold).unwrap();
            ((m.image_id, m.prediction_id, t), (m.gt_id.unwrap_or(0), m.outcome == "ignored"))
        })
        .collect();
    let keys: std::collections::HashSet<_> = ours.keys().chain(reference.matches.keys()).collect();
    if keys.is_empty() {
        return 1.0;
    }
    let agree = keys.iter().filter(|k| ours.get(k) == reference.matches.get(k)).count();
    agree as f64 / keys.len() as f64
}

pub struct Pair {
    pub name: &'static str,
    pub gt: AnnotationSet,
    pub preds: PredictionSet,
}

/// Three (GT, prediction) pairs built from loop runs on synthetic crowds:
/// differing worlds, loop variants, a thinned GT, and some crowd regions.
pub fn generated_pairs(n_scenes: usize) -> Vec<Pair> {
    let specs: [(&str, &str, StageConfig, DropRule, bool); 3] = [
        ("och_like two_pass", "och_like", StageConfig::two_pass(), DropRule::None, false),
        ("cihp_like plus", "cihp_like", StageConfig::plus(), DropRule::None, false),
        (
            "och_pose_like single_pass filtered+crowd",
            "och_pose_like",
            StageConfig::single_pass(),
            DropRule::Legacy,
            true,
        ),
    ];
    let stages = StageSet::oracle(&CorruptionProfile::standard());
    specs
        .into_iter()
        .map(|(name, preset, cfg, drop, crowd)| {
            let ds = make_dataset(&WorldConfig::preset(preset).unwrap(), n_scenes, drop).unwrap();
            let results = run_batch(&ds.scenes, &stages, &cfg).unwrap();
            let preds = PredictionSet::new(results.iter().flat_map(|r| r.to_predictions(r.scene_id)).collect());
            let mut gt = ds.filtered;
            if crowd {
                for inst in gt.instances.iter_mut().filter(|i| i.id % 7 == 0) {
                    inst.iscrowd = true;
                }
            }
            Pair { name, gt, preds }
        })
        .collect()
}
