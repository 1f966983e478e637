use serde::{Deserialize, Serialize};

use super::WorldError;

pub const N_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub width: u32,
    pub height: u32,
    /// Inclusive range of people per scene.
    pub n_people: [usize; 2],
    /// Target fraction of instances per IoUMax bin of width 0.05.
    pub ioumax_weights: Vec<f64>,
    /// Inclusive range of figure heights in pixels.
    pub scale_range: [f64; 2],
    /// Probability that a scene lets its outermost group cross the image border.
    pub truncation_prob: f64,
    /// Minimum visible (unoccluded) fraction of each figure.
    pub min_visible_fraction: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig::preset("och_pose_like").expect("built-in preset")
    }
}

/// Histogram shapes of the crowded benchmarks, per 0.05 IoUMax bin.
const OCH_LIKE: [f64; N_BINS] = [
    0.1849, 0.00052, 0.00052, 0.0, 0.00079, 0.00157, 0.0, 0.00026, 0.0, 0.0, 0.1709, 0.1333, 0.0990, 0.0757, 0.0550,
    0.1241, 0.0807, 0.0429, 0.0204, 0.0094,
];
const OCH_POSE_LIKE: [f64; N_BINS] = [
    0.0394, 0.0244, 0.0203, 0.0258, 0.0283, 0.0403, 0.0449, 0.0403, 0.0456, 0.0384, 0.1424, 0.1090, 0.0878, 0.0706,
    0.0476, 0.0884, 0.0553, 0.0297, 0.0154, 0.00648,
];
const CIHP_LIKE: [f64; N_BINS] = [
    0.2198, 0.1229, 0.1153, 0.1068, 0.0879, 0.0746, 0.0580, 0.0535, 0.0465, 0.0318, 0.0243, 0.0179, 0.0136, 0.0089,
    0.00736, 0.00417, 0.00263, 0.00274, 0.00080, 0.00057,
];

pub const PRESETS: [&str; 3] = ["och_like", "och_pose_like", "cihp_like"];

impl WorldConfig {
    pub fn preset(name: &str) -> Result<Self, WorldError> {
        let (weights, n_people): (&[f64; N_BINS], [usize; 2]) = match name {
            "och_like" => (&OCH_LIKE, [1, 4]),
            "och_pose_like" => (&OCH_POSE_LIKE, [1, 4]),
            "cihp_like" => (&CIHP_LIKE, [2, 5]),
            other => return Err(WorldError::Config(format!("unknown preset `{other}` (known: {PRESETS:?})"))),
        };
        let total: f64 = weights.iter().sum();
        Ok(Self {
            width: 512,
            height: 320,
            n_people,
            ioumax_weights: weights.iter().map(|w| w / total).collect(),
            scale_range: [110.0, 180.0],
            truncation_prob: 0.1,
            min_visible_fraction: 0.05,
            seed: 0,
        })
    }

    /// Single person per scene, no truncation.
    pub fn isolated() -> Self {
        let mut w = vec![0.0; N_BINS];
        w[0] = 1.0;
        Self { n_people: [1, 1], ioumax_weights: w, truncation_prob: 0.0, ..Self::preset("och_pose_like").unwrap() }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        if self.n_people[0] == 0 || self.n_people[0] > self.n_people[1] {
            return bad("n_people must be a range [min, max] with min >= 1");
        }
        if self.ioumax_weights.len() != N_BINS {
            return bad("ioumax_weights must have 20 entries");
        }
        if self.ioumax_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("ioumax_weights must be non-negative");
        }
        if (self.ioumax_weights.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("ioumax_weights must sum to 1");
        }
        if !(self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1]) {
            return bad("scale_range must be positive and ordered");
        }
        if self.scale_range[1] > self.height as f64 {
            return bad("figures taller than the image cannot be placed");
        }
        if !(0.0..=1.0).contains(&self.truncation_prob) || !(0.0..1.0).contains(&self.min_visible_fraction) {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}
