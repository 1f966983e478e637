use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PosePrediction;
use crate::coco_io::RleMask;
use crate::geometry::mask_xor;
use crate::model_stages::Prompt;

/// Keypoint metric used to rank prompt candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPolicy {
    #[default]
    Visibility,
    Presence,
    ExpectedOks,
    Confidence,
}

impl PromptPolicy {
    pub const ALL: [PromptPolicy; 4] =
        [PromptPolicy::Visibility, PromptPolicy::Presence, PromptPolicy::ExpectedOks, PromptPolicy::Confidence];

    pub fn name(&self) -> &'static str {
        match self {
            PromptPolicy::Visibility => "visibility",
            PromptPolicy::Presence => "presence",
            PromptPolicy::ExpectedOks => "expected_oks",
            PromptPolicy::Confidence => "confidence",
        }
    }

    fn metric(&self, k: &super::PoseKeypoint) -> f64 {
        match self {
            PromptPolicy::Visibility => k.visibility,
            PromptPolicy::Presence => k.presence,
            PromptPolicy::ExpectedOks => k.expected_oks,
            PromptPolicy::Confidence => k.confidence,
        }
    }
}

impl std::str::FromStr for PromptPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown prompt policy `{s}` (visibility, presence, expected_oks, confidence)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt count must be at least 1")]
    ZeroK,
    #[error("no keypoint is present and inside the image")]
    NoEligible,
}

/// Top-`k` keypoints by the policy metric among keypoints that are present
/// (`presence >= presence_cutoff`) and inside the `width x height` frame.
/// Ties go to the lower keypoint index.
pub fn select_prompts(
    pose: &PosePrediction,
    policy: PromptPolicy,
    k: usize,
    presence_cutoff: f64,
    width: u32,
    height: u32,
) -> Result<Vec<Prompt>, PromptError> {
    if k == 0 {
        return Err(PromptError::ZeroK);
    }
    let mut eligible: Vec<(usize, f64)> = pose
        .keypoints
        .iter()
        .enumerate()
        .filter(|(_, kp)| {
            kp.presence >= presence_cutoff && kp.x >= 0.0 && kp.y >= 0.0 && kp.x < width as f64 && kp.y < height as f64
        })
        .map(|(i, kp)| (i, policy.metric(kp)))
        .collect();
    if eligible.is_empty() {
        return Err(PromptError::NoEligible);
    }
    eligible.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(eligible
        .into_iter()
        .take(k)
        .map(|(i, _)| Prompt { x: pose.keypoints[i].x, y: pose.keypoints[i].y, positive: true })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrainingPromptError {
    /// Prediction equals the target; nothing left to correct.
    #[error("refinement complete")]
    RefinementComplete,
    #[error("mask sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((u32, u32), (u32, u32)),
}

fn most_visible(pose: &PosePrediction, keep: impl Fn(f64, f64) -> bool) -> Option<Prompt> {
    let mut best: Option<(usize, f64)> = None;
    for (i, k) in pose.keypoints.iter().enumerate() {
        if keep(k.x, k.y) && best.is_none_or(|(_, v)| k.visibility > v) {
            best = Some((i, k.visibility));
        }
    }
    best.map(|(i, _)| Prompt { x: pose.keypoints[i].x, y: pose.keypoints[i].y, positive: true })
}

fn pixel(x: f64, y: f64) -> (i64, i64) {
    (x.floor() as i64, y.floor() as i64)
}

/// Next interactive training prompt for a segmenter. Without a prediction:
/// the most visible keypoint on the target. Afterwards: the most visible
/// keypoint inside the error region (target xor prediction), else a uniform
/// random error pixel drawn from `seed`. Error pixels outside the target
/// give negative prompts.
pub fn sample_training_prompts(
    gt_mask: &RleMask,
    current: Option<&RleMask>,
    pose: &PosePrediction,
    seed: u64,
) -> Result<Prompt, TrainingPromptError> {
    let region = match current {
        None => {
            let in_frame =
                |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x < gt_mask.width as f64 && y < gt_mask.height as f64;
            if let Some(p) = most_visible(pose, in_frame) {
                return Ok(p);
            }
            gt_mask.clone()
        }
        Some(pred) => {
            if pred.size() != gt_mask.size() {
                return Err(TrainingPromptError::SizeMismatch(gt_mask.size(), pred.size()));
            }
            mask_xor(gt_mask, pred).expect("sizes checked")
        }
    };
    let total = region.area();
    if total == 0 {
        return Err(TrainingPromptError::RefinementComplete);
    }
    if current.is_some() {
        let on_error = |x: f64, y: f64| {
            let (px, py) = pixel(x, y);
            region.contains(px, py)
        };
        if let Some(mut p) = most_visible(pose, on_error) {
            let (px, py) = pixel(p.x, p.y);
            p.positive = gt_mask.contains(px, py);
            return Ok(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = rng.random_range(0..total);
    for (start, len) in region.foreground_runs() {
        if r < len {
            let idx = start + r;
            let h = region.height as u64;
            let (x, y) = ((idx / h) as i64, (idx % h) as i64);
            return Ok(Prompt { x: x as f64 + 0.5, y: y as f64 + 0.5, positive: gt_mask.contains(x, y) });
        }
        r -= len;
    }
    unreachable!("random index lies inside the region")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::loop_engine::PoseKeypoint;

    fn kp(x: f64, y: f64, v: f64) -> PoseKeypoint {
        PoseKeypoint { x, y, presence: 1.0, visibility: v, expected_oks: 0.5, confidence: 0.5 }
    }

    fn flat_pose() -> PosePrediction {
        PosePrediction { keypoints: (0..17).map(|i| kp(i as f64, 1.0, 0.5)).collect() }
    }

    #[test]
    fn ties_pick_lowest_indices() {
        let got = select_prompts(&flat_pose(), PromptPolicy::Visibility, 3, 0.5, 100, 100).unwrap();
        assert_eq!(got.iter().map(|p| p.x as usize).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn single_visible_keypoint_wins() {
        let mut pose = flat_pose();
        for k in &mut pose.keypoints {
            k.visibility = 0.1;
        }
        pose.keypoints[9].visibility = 0.9;
        let got = select_prompts(&pose, PromptPolicy::Visibility, 1, 0.5, 100, 100).unwrap();
        assert_eq!(got, vec![Prompt { x: 9.0, y: 1.0, positive: true }]);
    }

    #[test]
    fn absent_and_outside_keypoints_are_skipped() {
        let mut pose = flat_pose();
        for k in &mut pose.keypoints {
            k.presence = 0.1;
        }
        assert_eq!(select_prompts(&pose, PromptPolicy::Presence, 3, 0.5, 100, 100), Err(PromptError::NoEligible));
        pose.keypoints[4].presence = 0.9;
        pose.keypoints[5] = kp(-3.0, 1.0, 1.0);
        let got = select_prompts(&pose, PromptPolicy::Visibility, 3, 0.5, 100, 100).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(select_prompts(&pose, PromptPolicy::Visibility, 0, 0.5, 100, 100), Err(PromptError::ZeroK));
    }

    #[test]
    fn training_prompt_rules() {
        let gt = BBox::new(2.0, 2.0, 6.0, 6.0).to_rle(10, 10);
        let mut pose = flat_pose();
        pose.keypoints[3] = kp(4.5, 4.5, 0.95);
        let first = sample_training_prompts(&gt, None, &pose, 1).unwrap();
        assert_eq!((first.x, first.y), (4.5, 4.5));
        assert_eq!(sample_training_prompts(&gt, Some(&gt), &pose, 1), Err(TrainingPromptError::RefinementComplete));

        // the error region holds exactly one keypoint
        let pred = BBox::new(2.0, 2.0, 3.0, 6.0).to_rle(10, 10);
        let mut pose = flat_pose();
        for (i, k) in pose.keypoints.iter_mut().enumerate() {
            *k = kp(0.5 + (i % 2) as f64, 0.5, 0.99);
        }
        pose.keypoints[11] = kp(6.5, 3.5, 0.2);
        for seed in 0..1000 {
            let p = sample_training_prompts(&gt, Some(&pred), &pose, seed).unwrap();
            assert_eq!((p.x, p.y, p.positive), (6.5, 3.5, true));
        }
    }

    #[test]
    fn random_error_pixel_is_seeded() {
        let gt = BBox::new(2.0, 2.0, 6.0, 6.0).to_rle(10, 10);
        let pred = BBox::new(2.0, 2.0, 5.0, 6.0).to_rle(10, 10);
        let pose = PosePrediction { keypoints: vec![kp(0.5, 0.5, 1.0); 17] };
        let a = sample_training_prompts(&gt, Some(&pred), &pose, 7).unwrap();
        assert_eq!(a, sample_training_prompts(&gt, Some(&pred), &pose, 7).unwrap());
        assert!(a.x > 7.0 && a.x < 8.0 && a.positive);
    }
}
