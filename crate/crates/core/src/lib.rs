//! Orchestration engine for the detect → pose → segment mutual-conditioning
//! loop, with COCO-style evaluation, crowd dataset tooling, and a seeded
//! synthetic world of corruptible oracle stages to exercise it.

pub mod coco_io;
pub mod dataset_tools;
pub mod digest;
pub mod evaluator;
pub mod geometry;
pub mod loop_engine;
pub mod model_stages;
pub mod simulate;
pub mod synthetic_world;

/// COCO person keypoint names in canonical order.
pub const COCO_KEYPOINT_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Per-keypoint OKS constants published with the COCO keypoint benchmark.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089,
    0.089,
];

pub const NUM_KEYPOINTS: usize = 17;
