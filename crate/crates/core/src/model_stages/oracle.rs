use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Detection, Detector, Lift3d, Lifter3d, MaskRefiner, PoseEstimator, Prompt, StageError};
use crate::coco_io::RleMask;
use crate::digest::{derive_seed_str, json_digest, sha256_hex};
use crate::geometry::{
    dilate, erode, intersection_area, mask_difference, mask_union, BBox, BlackoutRaster, GeometryError,
};
use crate::loop_engine::{PoseKeypoint, PosePrediction};
use crate::synthetic_world::Scene;
use crate::COCO_SIGMAS;

/// Share of a conditioning mask that must belong to one person for the pose
/// oracle to treat it as clean.
pub const PURITY_CUTOFF: f64 = 0.8;

/// People with less than this share of their visible pixels left after
/// blackout are invisible to the oracle detector.
const DETECTOR_VISIBLE_CUTOFF: f64 = 0.05;

/// Named failure-mode knobs shared by all oracle stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionProfile {
    /// Visible people whose boxes overlap above this IoU collapse into one
    /// detection. Values above 1 disable merging.
    pub merge_iou_threshold: f64,
    /// Chance that a small person is missed, drawn afresh for every raster.
    pub miss_rate: f64,
    /// Visible area in px² below which a person counts as small.
    pub small_area: f64,
    /// Relative downward jitter of detector scores.
    pub score_jitter: f64,
    /// Keypoint localization noise in px.
    pub keypoint_noise_sigma: f64,
    pub occluded_noise_factor: f64,
    /// Noise multiplier when the pose stage gets no mask or an impure one.
    pub impure_noise_factor: f64,
    /// Per-keypoint chance of snapping to the other person when the pose
    /// stage has no clean mask.
    pub merge_swap_rate: f64,
    /// Spread of the pose scalars around their ideal values; 0 makes them exact.
    pub calibration_noise: f64,
    /// Refiner returns the union of touched body parts instead of one person.
    pub oversegmentation: bool,
    /// Refined masks are eroded or dilated by up to this many pixels.
    pub boundary_noise_radius: u32,
    /// 3D keypoint noise in metres with a mask prompt.
    #[serde(alias = "3d_noise_with_mask")]
    pub lift_noise_with_mask: f64,
    /// 3D keypoint noise in metres with a box-only prompt.
    #[serde(alias = "3d_noise_without_mask")]
    pub lift_noise_without_mask: f64,
    pub seed: u64,
}

impl Default for CorruptionProfile {
    fn default() -> Self {
        Self::standard()
    }
}

impl CorruptionProfile {
    pub fn perfect() -> Self {
        Self {
            merge_iou_threshold: 1.01,
            miss_rate: 0.0,
            small_area: 0.0,
            score_jitter: 0.0,
            keypoint_noise_sigma: 0.0,
            occluded_noise_factor: 1.0,
            impure_noise_factor: 1.0,
            merge_swap_rate: 0.0,
            calibration_noise: 0.0,
            oversegmentation: false,
            boundary_noise_radius: 0,
            lift_noise_with_mask: 0.0,
            lift_noise_without_mask: 0.0,
            seed: 0,
        }
    }

    pub fn standard() -> Self {
        Self {
            merge_iou_threshold: 0.5,
            miss_rate: 0.3,
            small_area: 3000.0,
            score_jitter: 0.1,
            keypoint_noise_sigma: 2.0,
            occluded_noise_factor: 2.0,
            impure_noise_factor: 1.5,
            merge_swap_rate: 0.35,
            calibration_noise: 1.0,
            oversegmentation: false,
            boundary_noise_radius: 1,
            lift_noise_with_mask: 0.01,
            lift_noise_without_mask: 0.015,
            seed: 0,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "perfect" => Some(Self::perfect()),
            "standard" => Some(Self::standard()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = [
            ("miss_rate", self.miss_rate),
            ("score_jitter", self.score_jitter),
            ("merge_swap_rate", self.merge_swap_rate),
            ("calibration_noise", self.calibration_noise),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        let nonneg = [
            ("merge_iou_threshold", self.merge_iou_threshold),
            ("small_area", self.small_area),
            ("keypoint_noise_sigma", self.keypoint_noise_sigma),
            ("occluded_noise_factor", self.occluded_noise_factor),
            ("impure_noise_factor", self.impure_noise_factor),
            ("lift_noise_with_mask", self.lift_noise_with_mask),
            ("lift_noise_without_mask", self.lift_noise_without_mask),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Randomness for one call: a function of the seed, the scene, the stage
    /// and the call inputs only.
    fn rng<T: Serialize + ?Sized>(&self, stage: &str, scene: &Scene, inputs: &T) -> ChaCha8Rng {
        let d = json_digest(inputs);
        let key = u64::from_str_radix(&d[..16], 16).expect("hex digest");
        ChaCha8Rng::seed_from_u64(derive_seed_str(self.seed, stage, &[scene.seed, scene.id, key]))
    }
}

fn geom(e: GeometryError) -> StageError {
    StageError::Precondition(e.to_string())
}

fn check_mask(scene: &Scene, m: &RleMask) -> Result<(), StageError> {
    if m.size() != (scene.height, scene.width) {
        return Err(StageError::Precondition(format!(
            "mask is {}x{}, scene is {}x{}",
            m.height, m.width, scene.height, scene.width
        )));
    }
    Ok(())
}

fn check_bbox(b: &BBox) -> Result<(), StageError> {
    if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) || b.w <= 0.0 || b.h <= 0.0 {
        return Err(StageError::Precondition(format!("invalid box {:?}", [b.x, b.y, b.w, b.h])));
    }
    Ok(())
}

fn argmax(values: &[u64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v > 0 && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Visible pixels of each person inside the box.
fn visible_in_box(scene: &Scene, bbox: &BBox) -> Result<Vec<u64>, StageError> {
    let r = bbox.clip(scene.width, scene.height).to_rle(scene.height, scene.width);
    scene.people.iter().map(|p| intersection_area(&p.mask, &r).map_err(geom)).collect()
}

/// The person a box-and-mask prompt refers to, with the share of the mask
/// that belongs to that person (0 without a usable mask).
fn prompted_person(scene: &Scene, bbox: Option<&BBox>, mask: Option<&RleMask>) -> Result<(usize, f64), StageError> {
    if let Some(m) = mask.filter(|m| m.area() > 0) {
        let overlap: Vec<u64> =
            scene.people.iter().map(|p| intersection_area(&p.mask, m)).collect::<Result<_, _>>().map_err(geom)?;
        if let Some(i) = argmax(&overlap) {
            return Ok((i, overlap[i] as f64 / m.area() as f64));
        }
    }
    let Some(b) = bbox else {
        return Err(StageError::Precondition("mask covers no person and no box was given".into()));
    };
    if let Some(i) = argmax(&visible_in_box(scene, b)?) {
        return Ok((i, 0.0));
    }
    // nobody visible in the box: fall back to the largest extent overlap
    let mut best = None;
    let mut best_v = 0.0;
    for (i, p) in scene.people.iter().enumerate() {
        let v = p.bbox.intersection_area(b);
        if v > best_v {
            best = Some(i);
            best_v = v;
        }
    }
    best.map(|i| (i, 0.0)).ok_or_else(|| StageError::Precondition("no person inside the prompt box".into()))
}

#[derive(Debug, Clone)]
pub struct OracleDetector {
    profile: CorruptionProfile,
}

impl OracleDetector {
    pub fn new(profile: CorruptionProfile) -> Self {
        Self { profile }
    }
}

struct Candidate {
    person: usize,
    visible: RleMask,
    score: f64,
}

impl Detector for OracleDetector {
    fn detect(&self, scene: &Scene, raster: &BlackoutRaster) -> Result<Vec<Detection>, StageError> {
        check_mask(scene, raster.as_rle())?;
        let p = &self.profile;
        let mut rng = p.rng("detector", scene, &raster.as_rle().counts);
        let mut cands = Vec::new();
        for (i, person) in scene.people.iter().enumerate() {
            // fixed draws per person keep each fate independent of the others
            let u_miss: f64 = rng.random();
            let u_score: f64 = rng.random();
            let total = person.mask.area();
            if total == 0 {
                continue;
            }
            let visible = mask_difference(&person.mask, raster.as_rle()).map_err(geom)?;
            let vf = visible.area() as f64 / total as f64;
            if vf < DETECTOR_VISIBLE_CUTOFF {
                continue;
            }
            if (visible.area() as f64) < p.small_area && u_miss < p.miss_rate {
                continue;
            }
            cands.push(Candidate { person: i, visible, score: vf * (1.0 - p.score_jitter * u_score) });
        }

        // overlapping visible people collapse into one detection
        let n = cands.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for a in 0..n {
            for b in a + 1..n {
                let (pa, pb) = (&scene.people[cands[a].person], &scene.people[cands[b].person]);
                if crate::geometry::bbox_iou_unchecked(&pa.bbox, &pb.bbox, false) > p.merge_iou_threshold {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut dets: Vec<Detection> = Vec::new();
        let mut roots: Vec<usize> = Vec::new();
        for (i, c) in cands.iter().enumerate() {
            let r = find(&mut parent, i);
            let bbox = scene.people[c.person].bbox;
            match roots.iter().position(|&x| x == r) {
                Some(k) => {
                    let d = &mut dets[k];
                    d.bbox = d.bbox.union(&bbox);
                    d.score = d.score.max(c.score);
                    let m = d.mask.take().expect("coarse mask");
                    d.mask = Some(mask_union(&m, &c.visible).map_err(geom)?);
                }
                None => {
                    roots.push(r);
                    dets.push(Detection { bbox, score: c.score, mask: Some(c.visible.clone()) });
                }
            }
        }
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(dets)
    }
}

#[derive(Debug, Clone)]
pub struct OraclePose {
    profile: CorruptionProfile,
}

impl OraclePose {
    pub fn new(profile: CorruptionProfile) -> Self {
        Self { profile }
    }
}

impl PoseEstimator for OraclePose {
    fn estimate_pose(
        &self,
        scene: &Scene,
        bbox: &BBox,
        mask: Option<&RleMask>,
        alpha: f64,
    ) -> Result<PosePrediction, StageError> {
        check_bbox(bbox)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(StageError::Precondition(format!("alpha {alpha} outside [0, 1]")));
        }
        if let Some(m) = mask {
            check_mask(scene, m)?;
        }
        let p = &self.profile;
        let mut rng = p.rng("pose", scene, &(bbox, mask.map(|m| &m.counts), alpha));
        let (owner_i, purity) = prompted_person(scene, Some(bbox), mask)?;
        let owner = &scene.people[owner_i];
        let impure = purity < PURITY_CUTOFF;
        let confuser = if impure {
            let mut in_box = visible_in_box(scene, bbox)?;
            in_box[owner_i] = 0;
            argmax(&in_box)
        } else {
            None
        };

        let area = owner.mask.area() as f64;
        let c = p.calibration_noise;
        let mut keypoints = Vec::with_capacity(owner.keypoints.len());
        for (k, &(gx, gy, _)) in owner.keypoints.iter().enumerate() {
            let u_swap: f64 = rng.random();
            let nx: f64 = StandardNormal.sample(&mut rng);
            let ny: f64 = StandardNormal.sample(&mut rng);
            let u_p: f64 = rng.random();
            let u_v: f64 = rng.random();
            let n_e: f64 = StandardNormal.sample(&mut rng);
            let u_c: f64 = rng.random();

            let swap = confuser.filter(|&j| u_swap < p.merge_swap_rate && scene.people[j].keypoints[k].2 == 2);
            let (sx, sy, sflag) = match swap {
                Some(j) => scene.people[j].keypoints[k],
                None => owner.keypoints[k],
            };
            let mut sigma = p.keypoint_noise_sigma;
            if sflag == 1 {
                sigma *= p.occluded_noise_factor;
            }
            if impure {
                sigma *= p.impure_noise_factor;
            }
            let (x, y) = (sx + sigma * nx, sy + sigma * ny);
            let var = (2.0 * COCO_SIGMAS[k]).powi(2);
            let d2 = (x - gx).powi(2) + (y - gy).powi(2);
            let true_oks = (-d2 / var / (area + f64::EPSILON) / 2.0).exp();
            keypoints.push(PoseKeypoint {
                x,
                y,
                presence: if sflag != 0 { 1.0 - 0.15 * c * u_p } else { 0.15 * c * u_p },
                visibility: if sflag == 2 { 1.0 - 0.4 * c * u_v } else { 0.4 * c * u_v },
                expected_oks: (true_oks + 0.1 * c * n_e).clamp(0.0, 1.0),
                confidence: ((1.0 - c) * true_oks + c * u_c).clamp(0.0, 1.0),
            });
        }
        Ok(PosePrediction { keypoints })
    }
}

#[derive(Debug, Clone)]
pub struct OracleRefiner {
    profile: CorruptionProfile,
}

impl OracleRefiner {
    pub fn new(profile: CorruptionProfile) -> Self {
        Self { profile }
    }
}

impl MaskRefiner for OracleRefiner {
    fn refine_mask(&self, scene: &Scene, prompts: &[Prompt], prior: Option<&RleMask>) -> Result<RleMask, StageError> {
        if let Some(m) = prior {
            check_mask(scene, m)?;
        }
        if !prompts.iter().any(|q| scene.in_image(q.x, q.y)) {
            return Err(StageError::Precondition("no prompt inside the scene".into()));
        }
        let positives = prompts.iter().filter(|q| q.positive && scene.in_image(q.x, q.y));
        let (h, w) = (scene.height, scene.width);

        if self.profile.oversegmentation {
            let mut out = RleMask::empty(h, w);
            let mut seen = Vec::new();
            for q in positives {
                if let Some(hit) = scene.part_at(q.x, q.y) {
                    if !seen.contains(&hit) {
                        seen.push(hit);
                        out = mask_union(&out, &scene.people[hit.0].part_masks[hit.1]).map_err(geom)?;
                    }
                }
            }
            return Ok(out);
        }

        // majority owner; ties go to whoever was prompted first
        let mut votes: Vec<(usize, usize)> = Vec::new();
        for q in positives {
            if let Some(i) = scene.person_at(q.x, q.y) {
                match votes.iter_mut().find(|v| v.0 == i) {
                    Some(v) => v.1 += 1,
                    None => votes.push((i, 1)),
                }
            }
        }
        let Some(&(owner, _)) = votes.iter().reduce(|a, b| if b.1 > a.1 { b } else { a }) else {
            return Ok(RleMask::empty(h, w));
        };
        let mask = &scene.people[owner].mask;
        let radius = self.profile.boundary_noise_radius;
        if radius == 0 {
            return Ok(mask.clone());
        }
        let mut rng = self.profile.rng("refiner", scene, &(prompts, prior.map(|m| &m.counts)));
        let r = rng.random_range(0..=radius);
        let grow: bool = rng.random();
        match (r, grow) {
            (0, _) => Ok(mask.clone()),
            (r, true) => dilate(mask, r).map_err(geom),
            (r, false) => erode(mask, r).map_err(geom),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleLifter {
    profile: CorruptionProfile,
}

impl OracleLifter {
    pub fn new(profile: CorruptionProfile) -> Self {
        Self { profile }
    }

    fn features_of(scene: &Scene) -> String {
        sha256_hex(format!("lifter:{}", scene.digest).as_bytes())
    }
}

impl Lifter3d for OracleLifter {
    fn encode_scene(&self, scene: &Scene) -> Result<String, StageError> {
        Ok(Self::features_of(scene))
    }

    fn lift(
        &self,
        scene: &Scene,
        features: &str,
        bbox: Option<&BBox>,
        mask: Option<&RleMask>,
    ) -> Result<Lift3d, StageError> {
        if bbox.is_none() && mask.is_none() {
            return Err(StageError::Precondition("lifting needs a box or a mask".into()));
        }
        if features != Self::features_of(scene) {
            return Err(StageError::Precondition("scene features belong to a different scene".into()));
        }
        if let Some(b) = bbox {
            check_bbox(b)?;
        }
        if let Some(m) = mask {
            check_mask(scene, m)?;
        }
        let with_mask = mask.is_some_and(|m| m.area() > 0);
        let (owner, _) = prompted_person(scene, bbox, mask)?;
        let sigma = if with_mask { self.profile.lift_noise_with_mask } else { self.profile.lift_noise_without_mask };
        let mut rng = self.profile.rng("lifter", scene, &(bbox, mask.map(|m| &m.counts)));
        let mut keypoints_3d = Vec::new();
        let mut reprojection = Vec::new();
        for p in &scene.people[owner].keypoints_3d {
            let mut q = *p;
            for v in q.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * n;
            }
            let (u, v) = scene.camera.project(q);
            keypoints_3d.push(q);
            reprojection.push([u, v]);
        }
        Ok(Lift3d { keypoints_3d, reprojection })
    }
}
