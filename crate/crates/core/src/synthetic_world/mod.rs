//! Seeded crowd scenes with complete ground truth: articulated ellipse
//! figures over the COCO skeleton, painter's-algorithm occlusion, 3D
//! skeletons behind a pinhole camera, and a controllable IoUMax distribution.

mod config;
mod figure;
mod scene;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco_io::{AnnotationSet, Category};
use crate::geometry::IouModePolicy;

pub use config::{WorldConfig, N_BINS, PRESETS};
pub use figure::{Articulation, Ellipse, Figure, KEYPOINT_PART, N_PARTS, PART_NAMES};
pub use scene::{generate_scene, Camera, Person, Scene, MAX_PLACEMENT_ATTEMPTS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("scene {scene_id}: could not place people for the overlap target after {attempts} attempts")]
    PlacementFailure { scene_id: u64, attempts: usize },
}

/// How to thin the complete ground truth into the published-style set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropRule {
    #[default]
    None,
    /// Keep only instances with IoUMax = 0 or IoUMax > 0.5.
    Legacy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub scenes: Vec<Scene>,
    pub complete: AnnotationSet,
    pub filtered: AnnotationSet,
}

/// Seed of scene `id` in a batch generated from `cfg.seed`.
pub fn scene_seed(cfg: &WorldConfig, id: u64) -> u64 {
    crate::digest::derive_seed_str(cfg.seed, "scene", &[id])
}

/// Scenes `1..=n_scenes`, generated in parallel; identical for any thread count.
pub fn generate_scenes(cfg: &WorldConfig, n_scenes: usize) -> Result<Vec<Scene>, WorldError> {
    cfg.validate()?;
    (1..=n_scenes as u64).into_par_iter().map(|id| generate_scene(cfg, id, scene_seed(cfg, id))).collect()
}

pub fn combine_annotations(scenes: &[Scene]) -> AnnotationSet {
    AnnotationSet {
        images: scenes.iter().map(|s| s.image_info()).collect(),
        instances: scenes.iter().flat_map(|s| s.people.iter().map(move |p| p.to_instance(s.id))).collect(),
        categories: vec![Category::coco_person()],
        ..Default::default()
    }
}

pub fn make_dataset(cfg: &WorldConfig, n_scenes: usize, drop_rule: DropRule) -> Result<SyntheticDataset, WorldError> {
    let scenes = generate_scenes(cfg, n_scenes)?;
    let complete = combine_annotations(&scenes);
    let filtered = match drop_rule {
        DropRule::None => complete.clone(),
        DropRule::Legacy => crate::dataset_tools::apply_legacy_filter(&complete, IouModePolicy::Bbox),
    };
    Ok(SyntheticDataset { scenes, complete, filtered })
}
