//! Batch experiments over synthetic scenes: loop variants, segmenter
//! specialization, prompt policies, the 3D hand-off and the effect of
//! incomplete ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco_io::{AnnotationSet, PredictedKeypoint, Prediction, PredictionSet};
use crate::digest::{derive_seed_str, json_digest};
use crate::evaluator::{evaluate, EvalError, EvalOptions, SimilarityKind};
use crate::loop_engine::{run_3d_handoff, run_loop, LoopError, LoopResult, PromptPolicy, StageConfig};
use crate::model_stages::{CorruptionProfile, StageEndpoints, StageSet};
use crate::synthetic_world::{make_dataset, DropRule, Scene, WorldConfig, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Single detector pass vs two passes vs two passes plus an extra pose pass.
    LoopVariants,
    /// Specialized vs over-segmenting refiner.
    Segmenter,
    /// Mask AP per prompt policy.
    PromptPolicies,
    /// Reprojection AP of mask-prompted vs box-only lifting.
    Handoff3d,
    /// A complete-GT oracle scored against complete vs legacy-filtered GT.
    MissingAnnotations,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::LoopVariants,
        Experiment::Segmenter,
        Experiment::PromptPolicies,
        Experiment::Handoff3d,
        Experiment::MissingAnnotations,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_scenes: usize,
    /// Mixed into the world and stage seeds.
    pub seed: u64,
    pub world: WorldConfig,
    pub stages: CorruptionProfile,
    #[serde(rename = "loop")]
    pub loop_cfg: StageConfig,
    pub experiments: Vec<Experiment>,
    /// External stages to use instead of the oracles. Profile variations of
    /// an experiment only reach the in-process oracles.
    #[serde(skip_serializing_if = "StageEndpoints::is_empty")]
    pub endpoints: StageEndpoints,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_scenes: 200,
            seed: 0,
            world: WorldConfig::default(),
            stages: CorruptionProfile::standard(),
            loop_cfg: StageConfig::default(),
            experiments: Experiment::ALL.to_vec(),
            endpoints: StageEndpoints::default(),
        }
    }
}

impl SimulationConfig {
    /// World and stage settings with the top-level seed mixed in.
    pub fn seeded(&self) -> (WorldConfig, CorruptionProfile) {
        let world = WorldConfig { seed: derive_seed_str(self.seed, "world", &[self.world.seed]), ..self.world.clone() };
        let stages = CorruptionProfile {
            seed: derive_seed_str(self.seed, "stages", &[self.stages.seed]),
            ..self.stages.clone()
        };
        (world, stages)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_scenes == 0 {
            return Err(SimError::Config("n_scenes must be at least 1".into()));
        }
        self.world.validate()?;
        self.stages.validate().map_err(SimError::Config)?;
        self.loop_cfg.validate()?;
        self.endpoints.apply(StageSet::oracle(&self.stages)).map_err(SimError::Config)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub experiment: Experiment,
    pub variant: String,
    pub keypoint_ap: Option<f64>,
    pub mask_ap: Option<f64>,
    pub n_predictions: usize,
    pub n_failed: usize,
    /// Scenes with at least one failed stage call.
    pub n_failed_scenes: usize,
    /// Digest of the loop results behind this row, if any.
    pub results_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n_scenes: usize,
    pub scenes_digest: String,
    pub rows: Vec<SimRow>,
    pub digest: String,
}

impl SimulationReport {
    pub fn row(&self, experiment: Experiment, variant: &str) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.experiment == experiment && r.variant == variant)
    }

    /// Largest share of scenes with a failed stage call in any row.
    pub fn failed_scene_fraction(&self) -> f64 {
        let worst = self.rows.iter().map(|r| r.n_failed_scenes).max().unwrap_or(0);
        worst as f64 / self.n_scenes.max(1) as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "experiment",
            "variant",
            "keypoint_ap",
            "mask_ap",
            "n_predictions",
            "n_failed",
            "n_failed_scenes",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let exp = serde_json::to_value(r.experiment).expect("enum");
            out.write_record([
                exp.as_str().unwrap_or_default().to_string(),
                r.variant.clone(),
                opt(r.keypoint_ap),
                opt(r.mask_ap),
                r.n_predictions.to_string(),
                r.n_failed.to_string(),
                r.n_failed_scenes.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs the loop on every scene, in parallel when all stages allow it.
/// Results come back in scene order either way.
pub fn run_batch(scenes: &[Scene], stages: &StageSet, cfg: &StageConfig) -> Result<Vec<LoopResult>, LoopError> {
    if stages.concurrent() {
        scenes.par_iter().map(|s| run_loop(s, stages, cfg)).collect()
    } else {
        scenes.iter().map(|s| run_loop(s, stages, cfg)).collect()
    }
}

fn predictions(scenes: &[Scene], results: &[LoopResult]) -> PredictionSet {
    PredictionSet::new(scenes.iter().zip(results).flat_map(|(s, r)| r.to_predictions(s.id)).collect())
}

fn ap(preds: &PredictionSet, gt: &AnnotationSet, kind: SimilarityKind) -> Result<f64, EvalError> {
    let opts = EvalOptions { matching_log: false, ..EvalOptions::default() };
    Ok(evaluate(preds, gt, kind, &opts)?.ap)
}

fn results_digest(results: &[LoopResult]) -> String {
    json_digest(&results.iter().map(|r| r.digest()).collect::<Vec<_>>())
}

struct Runner<'a> {
    scenes: &'a [Scene],
    gt: &'a AnnotationSet,
    profile: CorruptionProfile,
    base: StageConfig,
    endpoints: &'a StageEndpoints,
}

impl Runner<'_> {
    fn stages(&self, profile: &CorruptionProfile) -> Result<StageSet, SimError> {
        self.endpoints.apply(StageSet::oracle(profile)).map_err(SimError::Config)
    }

    fn loop_row(
        &self,
        experiment: Experiment,
        variant: &str,
        profile: &CorruptionProfile,
        cfg: &StageConfig,
    ) -> Result<(SimRow, Vec<LoopResult>), SimError> {
        let stages = self.stages(profile)?;
        let results = run_batch(self.scenes, &stages, cfg)?;
        let preds = predictions(self.scenes, &results);
        let row = SimRow {
            experiment,
            variant: variant.to_string(),
            keypoint_ap: Some(ap(&preds, self.gt, SimilarityKind::Oks)?),
            mask_ap: Some(ap(&preds, self.gt, SimilarityKind::MaskIoU)?),
            n_predictions: preds.len(),
            n_failed: results.iter().map(|r| r.failed.len()).sum(),
            n_failed_scenes: results.iter().filter(|r| !r.failed.is_empty()).count(),
            results_digest: Some(results_digest(&results)),
        };
        Ok((row, results))
    }
}

/// A predictor that knows the complete ground truth: every person's true
/// keypoints, scored by visible fraction.
fn complete_oracle_predictions(scenes: &[Scene]) -> PredictionSet {
    let mut preds = Vec::new();
    for s in scenes {
        for p in &s.people {
            let kps = p.keypoints.iter().map(|&(x, y, _)| PredictedKeypoint { x, y, score: 1.0 }).collect();
            preds.push(
                Prediction::new(s.id, p.visible_fraction().clamp(0.0, 1.0)).with_bbox(p.bbox).with_keypoints(kps),
            );
        }
    }
    PredictionSet::new(preds)
}

pub fn simulate(cfg: &SimulationConfig) -> Result<SimulationReport, SimError> {
    cfg.validate()?;
    let (world, profile) = cfg.seeded();
    let data = make_dataset(&world, cfg.n_scenes, DropRule::Legacy)?;
    let scenes = &data.scenes;
    let runner = Runner { scenes, gt: &data.complete, profile, base: cfg.loop_cfg.clone(), endpoints: &cfg.endpoints };
    let mut rows = Vec::new();

    for exp in &cfg.experiments {
        match exp {
            Experiment::LoopVariants => {
                let variants = [
                    ("single_pass", StageConfig { max_detector_passes: 1, plus_mode: false, ..runner.base.clone() }),
                    ("two_pass", StageConfig { max_detector_passes: 2, plus_mode: false, ..runner.base.clone() }),
                    ("two_pass_plus", StageConfig { max_detector_passes: 2, plus_mode: true, ..runner.base.clone() }),
                ];
                for (name, c) in variants {
                    rows.push(runner.loop_row(*exp, name, &runner.profile, &c)?.0);
                }
            }
            Experiment::Segmenter => {
                for (name, over) in [("specialized", false), ("unspecialized", true)] {
                    let p = CorruptionProfile { oversegmentation: over, ..runner.profile.clone() };
                    rows.push(runner.loop_row(*exp, name, &p, &runner.base)?.0);
                }
            }
            Experiment::PromptPolicies => {
                for policy in PromptPolicy::ALL {
                    let c = StageConfig { prompt_policy: policy, ..runner.base.clone() };
                    rows.push(runner.loop_row(*exp, policy.name(), &runner.profile, &c)?.0);
                }
            }
            Experiment::Handoff3d => {
                let stages = runner.stages(&runner.profile)?;
                let results = run_batch(scenes, &stages, &runner.base)?;
                for (name, use_mask) in [("mask_prompt", true), ("bbox_prompt", false)] {
                    let handoffs: Vec<_> = scenes
                        .par_iter()
                        .zip(&results)
                        .map(|(s, r)| run_3d_handoff(s, r, stages.lifter.as_deref(), &runner.base, use_mask))
                        .collect();
                    let preds = PredictionSet::new(
                        scenes
                            .iter()
                            .zip(&results)
                            .zip(&handoffs)
                            .flat_map(|((s, r), h)| h.to_predictions(r, s.id))
                            .collect(),
                    );
                    rows.push(SimRow {
                        experiment: *exp,
                        variant: name.to_string(),
                        keypoint_ap: Some(ap(&preds, &data.complete, SimilarityKind::Oks)?),
                        mask_ap: None,
                        n_predictions: preds.len(),
                        n_failed: handoffs.iter().map(|h| h.failed.len()).sum(),
                        n_failed_scenes: results
                            .iter()
                            .zip(&handoffs)
                            .filter(|(r, h)| !r.failed.is_empty() || !h.failed.is_empty())
                            .count(),
                        results_digest: Some(json_digest(&handoffs)),
                    });
                }
            }
            Experiment::MissingAnnotations => {
                let preds = complete_oracle_predictions(scenes);
                for (name, gt) in [("complete_gt", &data.complete), ("filtered_gt", &data.filtered)] {
                    rows.push(SimRow {
                        experiment: *exp,
                        variant: name.to_string(),
                        keypoint_ap: Some(ap(&preds, gt, SimilarityKind::Oks)?),
                        mask_ap: None,
                        n_predictions: preds.len(),
                        n_failed: 0,
                        n_failed_scenes: 0,
                        results_digest: None,
                    });
                }
            }
        }
    }

    let scenes_digest = json_digest(&scenes.iter().map(|s| &s.digest).collect::<Vec<_>>());
    let digest = json_digest(&(&scenes_digest, &rows));
    Ok(SimulationReport { n_scenes: cfg.n_scenes, scenes_digest, rows, digest })
}
