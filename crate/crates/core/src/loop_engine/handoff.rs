use serde::{Deserialize, Serialize};

use super::nms::{pose_nms, NmsCandidate};
use super::{skeleton_prediction, LoopResult, StageConfig};
use crate::coco_io::Prediction;
use crate::model_stages::Lifter3d;
use crate::synthetic_world::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body3d {
    /// Id of the loop instance that prompted this body.
    pub instance: usize,
    pub keypoints_3d: Vec<[f64; 3]>,
    pub reprojection: Vec<[f64; 2]>,
    /// Inherited from the 2D instance.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Handoff3d {
    /// No lifter was configured.
    pub skipped: bool,
    pub bodies: Vec<Body3d>,
    pub suppressed: Vec<Body3d>,
    /// `(instance, error code)` for failed lifts.
    pub failed: Vec<(usize, String)>,
}

impl Handoff3d {
    /// Reprojected bodies as keypoint predictions on image `image_id`.
    pub fn to_predictions(&self, result: &LoopResult, image_id: u64) -> Vec<Prediction> {
        self.bodies
            .iter()
            .map(|b| {
                let inst = result.instances.iter().find(|i| i.id == b.instance).expect("body of a loop instance");
                skeleton_prediction(image_id, b.score, inst.bbox, &b.reprojection)
            })
            .collect()
    }
}

/// Lifts every final 2D instance: the scene is encoded once, then each
/// instance is prompted with its box and, when `use_mask`, its refined mask.
/// Duplicate bodies are removed by NMS on the reprojections.
pub fn run_3d_handoff(
    scene: &Scene,
    result: &LoopResult,
    lifter: Option<&dyn Lifter3d>,
    cfg: &StageConfig,
    use_mask: bool,
) -> Handoff3d {
    let Some(lifter) = lifter else {
        return Handoff3d { skipped: true, ..Default::default() };
    };
    let mut out = Handoff3d::default();
    let features = match lifter.encode_scene(scene) {
        Ok(f) => f,
        Err(e) => {
            out.failed = result.instances.iter().map(|i| (i.id, e.code().to_string())).collect();
            return out;
        }
    };
    let mut bodies = Vec::new();
    let mut areas = Vec::new();
    for inst in &result.instances {
        let mask = use_mask.then_some(&inst.mask);
        match lifter.lift(scene, &features, Some(&inst.bbox), mask) {
            Ok(l) => {
                bodies.push(Body3d {
                    instance: inst.id,
                    keypoints_3d: l.keypoints_3d,
                    reprojection: l.reprojection,
                    score: inst.score,
                });
                areas.push(inst.area());
            }
            Err(e) => out.failed.push((inst.id, e.code().to_string())),
        }
    }
    let cands: Vec<NmsCandidate> = bodies
        .iter()
        .zip(&areas)
        .map(|(b, &area)| NmsCandidate {
            keypoints: b.reprojection.iter().map(|p| (p[0], p[1])).collect(),
            score: b.score,
            area,
        })
        .collect();
    let kept = pose_nms(&cands, cfg.pose_nms_oks_threshold);
    for (i, b) in bodies.into_iter().enumerate() {
        if kept.contains(&i) {
            out.bodies.push(b);
        } else {
            out.suppressed.push(b);
        }
    }
    out
}
