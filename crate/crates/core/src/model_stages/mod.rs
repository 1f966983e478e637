//! Stage interface (detector, pose estimator, mask refiner, 3D lifter),
//! corruptible oracle implementations backed by synthetic ground truth, and a
//! length-prefixed wire protocol for out-of-process stages.

mod adapter;
mod oracle;
mod server;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco_io::RleMask;
use crate::geometry::{BBox, BlackoutRaster};
use crate::loop_engine::PosePrediction;
use crate::synthetic_world::Scene;

pub use adapter::{AdapterConfig, Endpoint, RemoteStage, StageEndpoints, DEFAULT_TIMEOUT};
pub use oracle::{CorruptionProfile, OracleDetector, OracleLifter, OraclePose, OracleRefiner, PURITY_CUTOFF};
pub use server::{serve_connection, serve_tcp, OracleServer, SceneRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Detector,
    Pose,
    Refiner,
    Lifter,
}

impl StageKind {
    pub fn name(&self) -> &'static str {
        match self {
            StageKind::Detector => "detector",
            StageKind::Pose => "pose",
            StageKind::Refiner => "refiner",
            StageKind::Lifter => "lifter",
        }
    }
}

impl std::str::FromStr for StageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detector" => Ok(StageKind::Detector),
            "pose" => Ok(StageKind::Pose),
            "refiner" => Ok(StageKind::Refiner),
            "lifter" => Ok(StageKind::Lifter),
            other => Err(format!("unknown stage kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StageError {
    #[error("stage unavailable: {0}")]
    Unavailable(String),
    #[error("stage call timed out after {0} ms")]
    Timeout(u64),
    #[error("protocol version mismatch: local {local}, remote {remote}")]
    VersionMismatch { local: u32, remote: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid stage output ({code}): {message}")]
    Validation { code: String, message: String },
    #[error("remote stage error ({code}): {message}")]
    Remote { code: String, message: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{0} stage called through an adapter for a different stage kind")]
    WrongKind(&'static str),
}

impl StageError {
    /// Short machine-readable code; identical for an in-process failure and
    /// the same failure reported over the wire.
    pub fn code(&self) -> &str {
        match self {
            StageError::Unavailable(_) => "unavailable",
            StageError::Timeout(_) => wire::codes::TIMEOUT,
            StageError::VersionMismatch { .. } => wire::codes::VERSION_MISMATCH,
            StageError::Protocol(_) => "protocol",
            StageError::Validation { code, .. } | StageError::Remote { code, .. } => code,
            StageError::Precondition(_) => wire::codes::PRECONDITION,
            StageError::WrongKind(_) => wire::codes::WRONG_STAGE_KIND,
        }
    }
}

/// Whether a stage may serve several scenes at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    Concurrent,
    SingleScene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub x: f64,
    pub y: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lift3d {
    pub keypoints_3d: Vec<[f64; 3]>,
    pub reprojection: Vec<[f64; 2]>,
}

pub trait Detector: Send + Sync {
    /// Detections on the scene with `raster` blacked out, by descending score.
    fn detect(&self, scene: &Scene, raster: &BlackoutRaster) -> Result<Vec<Detection>, StageError>;

    fn affinity(&self) -> Affinity {
        Affinity::Concurrent
    }
}

pub trait PoseEstimator: Send + Sync {
    /// Pose inside `bbox`, optionally conditioned on an instance mask shown with transparency `alpha`.
    fn estimate_pose(
        &self,
        scene: &Scene,
        bbox: &BBox,
        mask: Option<&RleMask>,
        alpha: f64,
    ) -> Result<PosePrediction, StageError>;

    fn affinity(&self) -> Affinity {
        Affinity::Concurrent
    }
}

pub trait MaskRefiner: Send + Sync {
    fn refine_mask(&self, scene: &Scene, prompts: &[Prompt], prior: Option<&RleMask>) -> Result<RleMask, StageError>;

    fn affinity(&self) -> Affinity {
        Affinity::Concurrent
    }
}

pub trait Lifter3d: Send + Sync {
    /// Encodes the whole image once; returns an opaque feature digest.
    fn encode_scene(&self, scene: &Scene) -> Result<String, StageError>;

    /// Lifts one person prompted by a box and/or a mask.
    fn lift(
        &self,
        scene: &Scene,
        features: &str,
        bbox: Option<&BBox>,
        mask: Option<&RleMask>,
    ) -> Result<Lift3d, StageError>;

    fn affinity(&self) -> Affinity {
        Affinity::Concurrent
    }
}

/// The stages one loop run uses.
#[derive(Clone)]
pub struct StageSet {
    pub detector: Arc<dyn Detector>,
    pub pose: Arc<dyn PoseEstimator>,
    pub refiner: Arc<dyn MaskRefiner>,
    pub lifter: Option<Arc<dyn Lifter3d>>,
}

impl StageSet {
    /// Oracle stages for every kind, all driven by one corruption profile.
    pub fn oracle(profile: &CorruptionProfile) -> Self {
        Self {
            detector: Arc::new(OracleDetector::new(profile.clone())),
            pose: Arc::new(OraclePose::new(profile.clone())),
            refiner: Arc::new(OracleRefiner::new(profile.clone())),
            lifter: Some(Arc::new(OracleLifter::new(profile.clone()))),
        }
    }

    /// True when every stage accepts calls from several scenes at once.
    pub fn concurrent(&self) -> bool {
        self.detector.affinity() == Affinity::Concurrent
            && self.pose.affinity() == Affinity::Concurrent
            && self.refiner.affinity() == Affinity::Concurrent
            && self.lifter.as_ref().is_none_or(|l| l.affinity() == Affinity::Concurrent)
    }
}
