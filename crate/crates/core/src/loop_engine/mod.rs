//! The detect, pose, segment loop: detector passes over progressively
//! blacked-out scenes, mask-conditioned pose estimation, pose-prompted mask
//! refinement, pose NMS, optional extra pose passes and the 3D hand-off.

mod handoff;
mod nms;
mod pose;
mod prompts;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco_io::{PredictedKeypoint, Prediction, RleMask};
use crate::digest::json_digest;
use crate::evaluator::pose_score;
use crate::geometry::{visible_fraction, BBox, BlackoutRaster};
use crate::model_stages::{Detection, Prompt, StageError, StageKind, StageSet};
use crate::synthetic_world::Scene;
use crate::NUM_KEYPOINTS;

pub use handoff::{run_3d_handoff, Body3d, Handoff3d};
pub use nms::{pose_nms, pose_oks, skeleton_oks, NmsCandidate};
pub use pose::{PoseKeypoint, PosePrediction};
pub use prompts::{sample_training_prompts, select_prompts, PromptError, PromptPolicy, TrainingPromptError};

/// Detections with less than this share of their mask left visible after
/// blackout are dropped before pose estimation.
pub const VISIBLE_CUTOFF: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub detector_score_threshold: f64,
    pub prompt_policy: PromptPolicy,
    pub prompt_k: usize,
    /// Transparency of the conditioning mask handed to the pose stage.
    pub mask_alpha: f64,
    pub presence_cutoff: f64,
    pub pose_nms_oks_threshold: f64,
    pub max_detector_passes: usize,
    /// Extra pose passes on the refined masks after the detector passes.
    pub plus_mode: bool,
    /// Upper bound on plus-mode pose passes; they also stop once converged.
    pub max_pose_passes: usize,
    /// Re-run mask refinement after each plus-mode pose pass.
    pub full_alternation: bool,
    pub convergence_tol: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            detector_score_threshold: 0.3,
            prompt_policy: PromptPolicy::Visibility,
            prompt_k: 3,
            mask_alpha: 0.25,
            presence_cutoff: 0.5,
            pose_nms_oks_threshold: 0.8,
            max_detector_passes: 2,
            plus_mode: false,
            max_pose_passes: 1,
            full_alternation: false,
            convergence_tol: 0.01,
        }
    }
}

impl StageConfig {
    pub fn single_pass() -> Self {
        Self { max_detector_passes: 1, ..Self::default() }
    }

    pub fn two_pass() -> Self {
        Self::default()
    }

    pub fn plus() -> Self {
        Self { plus_mode: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let unit = [
            ("detector_score_threshold", self.detector_score_threshold),
            ("mask_alpha", self.mask_alpha),
            ("presence_cutoff", self.presence_cutoff),
            ("pose_nms_oks_threshold", self.pose_nms_oks_threshold),
            ("convergence_tol", self.convergence_tol),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(LoopError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.prompt_k == 0 {
            return Err(LoopError::Config("prompt_k must be at least 1".into()));
        }
        if self.max_detector_passes == 0 {
            return Err(LoopError::Config("max_detector_passes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("scene {0} has no people")]
    EmptyScene(u64),
    #[error("{stage} returned a {got:?} mask for a {expected:?} scene")]
    FrameMismatch { stage: &'static str, expected: (u32, u32), got: (u32, u32) },
}

/// One stage invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: usize,
    pub pass: usize,
    pub stage: String,
    pub instance: Option<usize>,
    pub inputs_digest: String,
    pub outputs_digest: String,
    /// `ok` or the stage error code.
    pub status: String,
    /// Excluded from result digests.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopInstance {
    /// Order of processing within the run.
    pub id: usize,
    pub pass: usize,
    pub detection: Detection,
    pub pose: PosePrediction,
    pub mask: RleMask,
    pub bbox: BBox,
    pub score: f64,
    pub prompts: Vec<Prompt>,
    /// No keypoint qualified as a prompt, so the box centre was used.
    pub prompt_fallback: bool,
    pub history: Vec<HistoryEntry>,
}

impl LoopInstance {
    /// Object scale used for skeleton similarity.
    pub fn area(&self) -> f64 {
        match self.mask.area() {
            0 => self.bbox.area(),
            a => a as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedInstance {
    pub pass: usize,
    pub instance: Option<usize>,
    pub stage: StageKind,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopResult {
    pub scene_id: u64,
    pub scene_digest: String,
    /// Final instances after pose NMS.
    pub instances: Vec<LoopInstance>,
    pub suppressed: Vec<LoopInstance>,
    pub failed: Vec<FailedInstance>,
    pub passes_run: usize,
    pub pose_passes_run: usize,
    /// Blackout coverage in pixels after each detector pass.
    pub coverage: Vec<u64>,
    pub trace: Vec<TraceRecord>,
}

impl LoopResult {
    /// Digest of everything except wall-clock times.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        for r in &mut c.trace {
            r.wall_ms = 0.0;
        }
        json_digest(&c)
    }

    pub fn trace_digest(&self) -> String {
        let stripped: Vec<TraceRecord> = self.trace.iter().map(|r| TraceRecord { wall_ms: 0.0, ..r.clone() }).collect();
        json_digest(&stripped)
    }

    /// Writes the trace as one JSON object per line.
    pub fn write_trace<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Final instances as COCO-style predictions on image `image_id`.
    pub fn to_predictions(&self, image_id: u64) -> Vec<Prediction> {
        self.instances
            .iter()
            .map(|i| {
                Prediction::new(image_id, i.score)
                    .with_bbox(i.bbox)
                    .with_mask(i.mask.clone())
                    .with_keypoints(i.pose.to_predicted())
            })
            .collect()
    }
}

struct Tracer {
    records: Vec<TraceRecord>,
}

impl Tracer {
    fn record<I: Serialize, O: Serialize>(
        &mut self,
        pass: usize,
        stage: StageKind,
        instance: Option<usize>,
        inputs: &I,
        out: &Result<O, StageError>,
        started: Instant,
    ) {
        let (outputs_digest, status) = match out {
            Ok(o) => (json_digest(o), "ok".to_string()),
            Err(e) => (json_digest(e.code()), e.code().to_string()),
        };
        self.records.push(TraceRecord {
            seq: self.records.len(),
            pass,
            stage: stage.name().to_string(),
            instance,
            inputs_digest: json_digest(inputs),
            outputs_digest,
            status,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
}

fn check_frame(stage: &'static str, scene: &Scene, m: &RleMask) -> Result<(), LoopError> {
    let expected = (scene.height, scene.width);
    if m.size() != expected {
        return Err(LoopError::FrameMismatch { stage, expected, got: m.size() });
    }
    Ok(())
}

fn checked_pose(p: Result<PosePrediction, StageError>) -> Result<PosePrediction, StageError> {
    let p = p?;
    if p.keypoints.len() != NUM_KEYPOINTS || !p.is_valid() {
        return Err(StageError::Validation {
            code: "invalid_payload".into(),
            message: "pose must have 17 keypoints with scalars in [0, 1]".into(),
        });
    }
    Ok(p)
}

fn fail(pass: usize, instance: Option<usize>, stage: StageKind, e: &StageError) -> FailedInstance {
    FailedInstance { pass, instance, stage, code: e.code().to_string(), message: e.to_string() }
}

struct Ctx<'a> {
    scene: &'a Scene,
    stages: &'a StageSet,
    cfg: &'a StageConfig,
    tracer: Tracer,
}

impl Ctx<'_> {
    fn pose(
        &mut self,
        pass: usize,
        id: usize,
        bbox: &BBox,
        mask: Option<&RleMask>,
    ) -> Result<PosePrediction, StageError> {
        let t = Instant::now();
        let out = checked_pose(self.stages.pose.estimate_pose(self.scene, bbox, mask, self.cfg.mask_alpha));
        let inputs = (&self.scene.digest, bbox, mask.map(|m| &m.counts), self.cfg.mask_alpha);
        self.tracer.record(pass, StageKind::Pose, Some(id), &inputs, &out, t);
        out
    }

    /// Prompt selection then refinement; returns prompts, fallback flag and mask.
    fn refine(
        &mut self,
        pass: usize,
        id: usize,
        pose: &PosePrediction,
        bbox: &BBox,
        prior: Option<&RleMask>,
    ) -> Result<(Vec<Prompt>, bool, RleMask), (StageKind, StageError)> {
        let s = self.scene;
        let (prompts, fallback) = match select_prompts(
            pose,
            self.cfg.prompt_policy,
            self.cfg.prompt_k,
            self.cfg.presence_cutoff,
            s.width,
            s.height,
        ) {
            Ok(p) => (p, false),
            Err(_) => {
                let c = bbox.clip(s.width, s.height).center();
                (vec![Prompt { x: c.0, y: c.1, positive: true }], true)
            }
        };
        let t = Instant::now();
        let out = self.stages.refiner.refine_mask(s, &prompts, prior);
        let inputs = (&s.digest, &prompts, prior.map(|m| &m.counts));
        self.tracer.record(pass, StageKind::Refiner, Some(id), &inputs, &out, t);
        let mask = out.map_err(|e| (StageKind::Refiner, e))?;
        if mask.size() != (s.height, s.width) {
            return Err((
                StageKind::Refiner,
                StageError::Validation {
                    code: "frame_mismatch".into(),
                    message: "refined mask has the wrong size".into(),
                },
            ));
        }
        if mask.is_empty() {
            return Err((
                StageKind::Refiner,
                StageError::Validation { code: "empty_mask".into(), message: "all prompts fell on background".into() },
            ));
        }
        Ok((prompts, fallback, mask))
    }
}

fn mask_bbox(mask: &RleMask, fallback: BBox) -> BBox {
    mask.bbox().map(|b| BBox::new(b[0], b[1], b[2], b[3])).unwrap_or(fallback)
}

/// Runs the loop on one scene. Stage failures are isolated to the instance
/// they occur on; only configuration and frame errors abort the run.
pub fn run_loop(scene: &Scene, stages: &StageSet, cfg: &StageConfig) -> Result<LoopResult, LoopError> {
    cfg.validate()?;
    if scene.people.is_empty() {
        return Err(LoopError::EmptyScene(scene.id));
    }
    let (h, w) = (scene.height, scene.width);
    let mut ctx = Ctx { scene, stages, cfg, tracer: Tracer { records: Vec::new() } };
    let mut raster = BlackoutRaster::new(h, w);
    let mut processed: Vec<LoopInstance> = Vec::new();
    let mut failed = Vec::new();
    let mut coverage = Vec::new();
    let mut next_id = 0usize;

    for pass in 1..=cfg.max_detector_passes {
        let t = Instant::now();
        let out = stages.detector.detect(scene, &raster);
        ctx.tracer.record(pass, StageKind::Detector, None, &(&scene.digest, &raster.as_rle().counts), &out, t);
        let dets = match out {
            Ok(d) => d,
            Err(e) => {
                failed.push(fail(pass, None, StageKind::Detector, &e));
                coverage.push(raster.coverage());
                continue;
            }
        };
        let mut accepted = Vec::new();
        for d in dets {
            if let Some(m) = &d.mask {
                check_frame("detector", scene, m)?;
            }
            if !(d.score >= cfg.detector_score_threshold && d.score <= 1.0) {
                continue;
            }
            let region = match &d.mask {
                Some(m) if m.area() > 0 => m.clone(),
                _ => d.bbox.clip(w, h).to_rle(h, w),
            };
            if region.area() == 0 || visible_fraction(&region, &raster).unwrap_or(0.0) < VISIBLE_CUTOFF {
                continue;
            }
            accepted.push(d);
        }
        accepted.sort_by(|a, b| b.score.total_cmp(&a.score));

        for det in accepted {
            let id = next_id;
            next_id += 1;
            let pose = match ctx.pose(pass, id, &det.bbox, det.mask.as_ref()) {
                Ok(p) => p,
                Err(e) => {
                    failed.push(fail(pass, Some(id), StageKind::Pose, &e));
                    continue;
                }
            };
            let (prompts, prompt_fallback, mask) = match ctx.refine(pass, id, &pose, &det.bbox, det.mask.as_ref()) {
                Ok(r) => r,
                Err((stage, e)) => {
                    failed.push(fail(pass, Some(id), stage, &e));
                    continue;
                }
            };
            raster = raster.apply(&mask).expect("frame checked");
            let history = vec![
                HistoryEntry { step: "pose".into(), digest: json_digest(&pose) },
                HistoryEntry { step: "refine".into(), digest: json_digest(&mask.counts) },
            ];
            processed.push(LoopInstance {
                id,
                pass,
                bbox: mask_bbox(&mask, det.bbox),
                detection: det,
                pose,
                mask,
                score: 0.0,
                prompts,
                prompt_fallback,
                history,
            });
        }
        coverage.push(raster.coverage());
    }

    let mut pose_passes_run = 0;
    if cfg.plus_mode {
        for round in 1..=cfg.max_pose_passes {
            let pass = cfg.max_detector_passes + round;
            let prev: Vec<(PosePrediction, f64)> = processed.iter().map(|i| (i.pose.clone(), i.area())).collect();
            for inst in processed.iter_mut() {
                let pose = match ctx.pose(pass, inst.id, &inst.bbox, Some(&inst.mask)) {
                    Ok(p) => p,
                    Err(e) => {
                        failed.push(fail(pass, Some(inst.id), StageKind::Pose, &e));
                        continue;
                    }
                };
                inst.history.push(HistoryEntry { step: "pose".into(), digest: json_digest(&pose) });
                inst.pose = pose;
                if cfg.full_alternation {
                    match ctx.refine(pass, inst.id, &inst.pose.clone(), &inst.bbox.clone(), Some(&inst.mask.clone())) {
                        Ok((prompts, fb, mask)) => {
                            inst.history
                                .push(HistoryEntry { step: "refine".into(), digest: json_digest(&mask.counts) });
                            inst.prompts = prompts;
                            inst.prompt_fallback = fb;
                            inst.bbox = mask_bbox(&mask, inst.bbox);
                            inst.mask = mask;
                        }
                        Err((stage, e)) => failed.push(fail(pass, Some(inst.id), stage, &e)),
                    }
                }
            }
            pose_passes_run = round;
            let prev_refs: Vec<(&PosePrediction, f64)> = prev.iter().map(|(p, a)| (p, *a)).collect();
            let curr: Vec<&PosePrediction> = processed.iter().map(|i| &i.pose).collect();
            if nms::poses_converged(&prev_refs, &curr, cfg.convergence_tol) {
                break;
            }
        }
    }

    for inst in processed.iter_mut() {
        inst.score = pose_score(&inst.pose, cfg.presence_cutoff);
    }
    let cands: Vec<NmsCandidate> = processed
        .iter()
        .map(|i| NmsCandidate { keypoints: nms::locations(&i.pose), score: i.score, area: i.area() })
        .collect();
    let kept = pose_nms(&cands, cfg.pose_nms_oks_threshold);
    let mut keep_flags = vec![false; processed.len()];
    for &k in &kept {
        keep_flags[k] = true;
    }
    let (instances, suppressed): (Vec<_>, Vec<_>) = processed.into_iter().zip(keep_flags).partition(|(_, keep)| *keep);

    Ok(LoopResult {
        scene_id: scene.id,
        scene_digest: scene.digest.clone(),
        instances: instances.into_iter().map(|(i, _)| i).collect(),
        suppressed: suppressed.into_iter().map(|(i, _)| i).collect(),
        failed,
        passes_run: cfg.max_detector_passes,
        pose_passes_run,
        coverage,
        trace: ctx.tracer.records,
    })
}

/// Whether two results on the same scene agree: equal instance counts and a
/// mean OKS of at least `1 - tol` between greedily matched poses.
pub fn converged(prev: &LoopResult, curr: &LoopResult, tol: f64) -> bool {
    let p: Vec<(&PosePrediction, f64)> = prev.instances.iter().map(|i| (&i.pose, i.area())).collect();
    let c: Vec<&PosePrediction> = curr.instances.iter().map(|i| &i.pose).collect();
    nms::poses_converged(&p, &c, tol)
}

/// Reprojected skeletons as keypoint predictions (every keypoint scored 1).
pub(crate) fn skeleton_prediction(image_id: u64, score: f64, bbox: BBox, pts: &[[f64; 2]]) -> Prediction {
    Prediction::new(image_id, score)
        .with_bbox(bbox)
        .with_keypoints(pts.iter().map(|p| PredictedKeypoint { x: p[0], y: p[1], score: 1.0 }).collect())
}

#[cfg(test)]
mod tests;
