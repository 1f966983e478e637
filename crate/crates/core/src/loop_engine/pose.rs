use serde::{Deserialize, Serialize};

/// One keypoint of a probabilistic pose estimate. The four scalars live in [0, 1];
/// the location may fall outside the image when presence is low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseKeypoint {
    pub x: f64,
    pub y: f64,
    /// Probability that the keypoint lies inside the image.
    pub presence: f64,
    /// Probability that the keypoint is not occluded.
    pub visibility: f64,
    /// Predicted OKS of this keypoint's location.
    pub expected_oks: f64,
    /// Raw heatmap-style confidence.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePrediction {
    pub keypoints: Vec<PoseKeypoint>,
}

impl PosePrediction {
    /// Whether every scalar is inside [0, 1] and finite.
    pub fn is_valid(&self) -> bool {
        self.keypoints.iter().all(|k| {
            k.x.is_finite()
                && k.y.is_finite()
                && [k.presence, k.visibility, k.expected_oks, k.confidence].iter().all(|v| (0.0..=1.0).contains(v))
        })
    }

    pub fn to_predicted(&self) -> Vec<crate::coco_io::PredictedKeypoint> {
        self.keypoints
            .iter()
            .map(|k| crate::coco_io::PredictedKeypoint { x: k.x, y: k.y, score: k.confidence })
            .collect()
    }
}
