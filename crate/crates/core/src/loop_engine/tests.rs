use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::*;
use crate::coco_io::{AnnotationSet, PredictionSet};
use crate::evaluator::{evaluate, oks, EvalOptions, SimilarityKind};
use crate::geometry::mask_union;
use crate::model_stages::{CorruptionProfile, MaskRefiner, OracleRefiner};
use crate::synthetic_world::{generate_scene, WorldConfig};

fn isolated() -> Scene {
    generate_scene(&WorldConfig::isolated(), 1, 21).unwrap()
}

fn pair(bin: usize, id: u64) -> Scene {
    let mut weights = vec![0.0; 20];
    weights[bin] = 1.0;
    let cfg = WorldConfig { n_people: [2, 2], ioumax_weights: weights, truncation_prob: 0.0, ..WorldConfig::default() };
    generate_scene(&cfg, id, 100 + id).unwrap()
}

fn kp_ap(scene: &Scene, preds: Vec<crate::coco_io::Prediction>) -> f64 {
    let gt: AnnotationSet = scene.annotation_set();
    evaluate(&PredictionSet::new(preds), &gt, SimilarityKind::Oks, &EvalOptions::default()).unwrap().ap
}

#[test]
fn isolated_person_is_a_fixed_point() {
    let s = isolated();
    let stages = StageSet::oracle(&CorruptionProfile::perfect());
    let one = run_loop(&s, &stages, &StageConfig::single_pass()).unwrap();
    let two = run_loop(&s, &stages, &StageConfig::two_pass()).unwrap();
    assert_eq!(one.instances.len(), 1);
    assert_eq!(one.instances[0].score, 1.0);
    assert_eq!(one.instances, two.instances);
    assert_eq!(one.instances[0].mask, s.people[0].mask);
    assert!(one.failed.is_empty());
}

#[test]
fn second_pass_recovers_merged_person() {
    let s = pair(12, 4);
    let profile = CorruptionProfile { merge_iou_threshold: 0.5, ..CorruptionProfile::perfect() };
    let stages = StageSet::oracle(&profile);
    let raster = BlackoutRaster::new(s.height, s.width);
    assert_eq!(stages.detector.detect(&s, &raster).unwrap().len(), 1);

    let single = run_loop(&s, &stages, &StageConfig::single_pass()).unwrap();
    assert_eq!(single.instances.len(), 1);
    let res = run_loop(&s, &stages, &StageConfig::two_pass()).unwrap();
    assert_eq!(res.instances.len(), 2);
    let gt = s.annotation_set();
    let sigmas = crate::COCO_SIGMAS.to_vec();
    for inst in &res.instances {
        let best = gt.instances.iter().map(|g| oks(&inst.pose.to_predicted(), g, &sigmas).unwrap()).fold(0.0, f64::max);
        assert!(best > 0.9, "{best}");
    }
}

#[test]
fn raster_is_union_of_refined_masks_and_grows() {
    let cfg = WorldConfig::preset("och_like").unwrap();
    let stages = StageSet::oracle(&CorruptionProfile::standard());
    for id in 1..=10 {
        let s = generate_scene(&cfg, id, id * 3).unwrap();
        let r = run_loop(&s, &stages, &StageConfig::plus()).unwrap();
        assert!(r.coverage.windows(2).all(|w| w[0] <= w[1]));
        let mut union = RleMask::empty(s.height, s.width);
        for i in r.instances.iter().chain(&r.suppressed) {
            union = mask_union(&union, &i.mask).unwrap();
        }
        assert_eq!(union.area(), *r.coverage.last().unwrap());
    }
}

#[test]
fn loop_is_deterministic() {
    let s = pair(13, 9);
    let stages = StageSet::oracle(&CorruptionProfile::standard());
    let a = run_loop(&s, &stages, &StageConfig::plus()).unwrap();
    let b = run_loop(&s, &stages, &StageConfig::plus()).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_eq!(a.trace_digest(), b.trace_digest());
    let mut buf = Vec::new();
    a.write_trace(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), a.trace.len());
}

struct FlakyRefiner {
    inner: OracleRefiner,
    fail_on: usize,
    calls: AtomicUsize,
}

impl MaskRefiner for FlakyRefiner {
    fn refine_mask(&self, scene: &Scene, prompts: &[Prompt], prior: Option<&RleMask>) -> Result<RleMask, StageError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_on {
            return Err(StageError::Unavailable("injected".into()));
        }
        self.inner.refine_mask(scene, prompts, prior)
    }
}

#[test]
fn refinement_failure_is_isolated() {
    let cfg = WorldConfig { n_people: [3, 3], ..WorldConfig::preset("och_pose_like").unwrap() };
    let s = generate_scene(&cfg, 5, 55).unwrap();
    let profile = CorruptionProfile::perfect();
    let good = StageSet::oracle(&profile);
    let base = run_loop(&s, &good, &StageConfig::single_pass()).unwrap();
    assert!(base.instances.len() >= 2);
    let mut flaky = good.clone();
    flaky.refiner =
        Arc::new(FlakyRefiner { inner: OracleRefiner::new(profile), fail_on: 1, calls: AtomicUsize::new(0) });
    let res = run_loop(&s, &flaky, &StageConfig::single_pass()).unwrap();
    assert_eq!(res.failed.len(), 1);
    assert_eq!(res.failed[0].stage, StageKind::Refiner);
    assert_eq!(res.failed[0].code, "unavailable");
    assert_eq!(res.instances[0], base.instances[0]);
    assert_eq!(res.instances.len(), base.instances.len() - 1);
}

#[test]
fn convergence_rules() {
    let s = pair(11, 2);
    let stages = StageSet::oracle(&CorruptionProfile::standard());
    let a = run_loop(&s, &stages, &StageConfig::two_pass()).unwrap();
    assert!(converged(&a, &a, 0.0));
    let mut fewer = a.clone();
    fewer.instances.pop();
    assert!(!converged(&a, &fewer, 1.0));

    // shift every keypoint of one pose by d and compare with direct arithmetic
    let mut single = a.clone();
    single.instances.truncate(1);
    let mut moved = single.clone();
    let d = 3.0;
    for k in &mut moved.instances[0].pose.keypoints {
        k.x += d;
    }
    let area = single.instances[0].area();
    let expect: f64 = crate::COCO_SIGMAS
        .iter()
        .map(|s| (-(d * d) / (2.0 * s).powi(2) / (area + f64::EPSILON) / 2.0).exp())
        .sum::<f64>()
        / 17.0;
    assert!(converged(&single, &moved, 1.0 - expect + 1e-9));
    assert!(!converged(&single, &moved, 1.0 - expect - 1e-9));
}

#[test]
fn perfect_handoff_scores_one() {
    let s = pair(10, 6);
    let stages = StageSet::oracle(&CorruptionProfile::perfect());
    let r = run_loop(&s, &stages, &StageConfig::two_pass()).unwrap();
    let h = run_3d_handoff(&s, &r, stages.lifter.as_deref(), &StageConfig::two_pass(), true);
    assert!(!h.skipped);
    assert_eq!(h.bodies.len(), 2);
    assert!((kp_ap(&s, h.to_predictions(&r, s.id)) - 1.0).abs() < 1e-12);
    assert!(run_3d_handoff(&s, &r, None, &StageConfig::default(), true).skipped);
}

#[test]
fn duplicated_body_is_suppressed() {
    let s = isolated();
    let stages = StageSet::oracle(&CorruptionProfile::perfect());
    let mut r = run_loop(&s, &stages, &StageConfig::single_pass()).unwrap();
    let mut dup = r.instances[0].clone();
    dup.id = 99;
    dup.score = 0.5;
    r.instances.push(dup);
    let h = run_3d_handoff(&s, &r, stages.lifter.as_deref(), &StageConfig::default(), true);
    assert_eq!(h.bodies.len(), 1);
    assert_eq!(h.bodies[0].instance, r.instances[0].id);
    assert_eq!(h.suppressed.len(), 1);
}

#[test]
fn config_validation() {
    assert!(StageConfig { prompt_k: 0, ..StageConfig::default() }.validate().is_err());
    assert!(StageConfig { mask_alpha: 1.5, ..StageConfig::default() }.validate().is_err());
    let s = isolated();
    let stages = StageSet::oracle(&CorruptionProfile::perfect());
    assert!(matches!(
        run_loop(&s, &stages, &StageConfig { max_detector_passes: 0, ..StageConfig::default() }),
        Err(LoopError::Config(_))
    ));
}
