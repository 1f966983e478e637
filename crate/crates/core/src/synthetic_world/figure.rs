use rand::Rng;
use serde::{Deserialize, Serialize};

pub const N_PARTS: usize = 10;
pub const PART_NAMES: [&str; N_PARTS] = [
    "head",
    "torso",
    "left_upper_arm",
    "right_upper_arm",
    "left_forearm",
    "right_forearm",
    "left_thigh",
    "right_thigh",
    "left_shin",
    "right_shin",
];

/// Part whose region contains each COCO keypoint.
pub const KEYPOINT_PART: [usize; 17] = [0, 0, 0, 0, 0, 2, 3, 2, 3, 4, 5, 6, 7, 6, 7, 8, 9];

/// Back-to-front painting order of parts within one figure.
pub const PAINT_ORDER: [usize; N_PARTS] = [1, 6, 7, 8, 9, 0, 2, 3, 4, 5];

/// Rotated ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along `angle`.
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Tight axis-aligned extent `(x0, y0, x1, y1)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)
    }

    fn segment(p: (f64, f64), q: (f64, f64), half_width: f64) -> Self {
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let len = (dx * dx + dy * dy).sqrt();
        Ellipse {
            cx: (p.0 + q.0) / 2.0,
            cy: (p.1 + q.1) / 2.0,
            a: len / 2.0 + half_width,
            b: half_width,
            angle: dy.atan2(dx),
        }
    }
}

/// Joint angles of one figure, in radians measured from straight down;
/// positive values move a limb away from the body midline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Articulation {
    pub upper_arm: [f64; 2],
    pub forearm: [f64; 2],
    pub thigh: [f64; 2],
    pub shin: [f64; 2],
    pub lean: f64,
}

impl Articulation {
    pub fn neutral() -> Self {
        Self { upper_arm: [0.2; 2], forearm: [0.1; 2], thigh: [0.08; 2], shin: [0.04; 2], lean: 0.0 }
    }

    /// `self + t * (other - self)`, per angle.
    pub fn blend(&self, other: &Self, t: f64) -> Self {
        let mix = |a: f64, b: f64| a + t * (b - a);
        let mix2 = |a: [f64; 2], b: [f64; 2]| [mix(a[0], b[0]), mix(a[1], b[1])];
        Self {
            upper_arm: mix2(self.upper_arm, other.upper_arm),
            forearm: mix2(self.forearm, other.forearm),
            thigh: mix2(self.thigh, other.thigh),
            shin: mix2(self.shin, other.shin),
            lean: mix(self.lean, other.lean),
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut two = |lo: f64, hi: f64| [rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let upper_arm = two(0.05, 1.5);
        let forearm = two(-0.6, 1.2);
        let thigh = two(0.0, 0.3);
        let shin = two(-0.15, 0.25);
        Self { upper_arm, forearm, thigh, shin, lean: rng.random_range(-0.12..0.12) }
    }
}

/// Articulated figure of height `scale` pixels centred at `(cx, cy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    pub keypoints: Vec<(f64, f64)>,
    pub parts: Vec<Ellipse>,
}

impl Figure {
    pub fn new(cx: f64, cy: f64, scale: f64, art: &Articulation) -> Self {
        // body frame: unit height, origin at body centre, y down
        let (ls, lc) = art.lean.sin_cos();
        let to_px = |x: f64, y: f64| (cx + scale * (x * lc - y * ls), cy + scale * (x * ls + y * lc));
        let limb = |from: (f64, f64), len: f64, angle: f64, side: f64| {
            (from.0 + side * len * angle.sin(), from.1 + len * angle.cos())
        };
        let mut kp = vec![(0.0, 0.0); 17];
        kp[0] = (0.0, -0.42);
        kp[1] = (0.025, -0.44);
        kp[2] = (-0.025, -0.44);
        kp[3] = (0.05, -0.43);
        kp[4] = (-0.05, -0.43);
        kp[5] = (0.11, -0.30);
        kp[6] = (-0.11, -0.30);
        kp[11] = (0.07, 0.02);
        kp[12] = (-0.07, 0.02);
        for (side_idx, side) in [(0usize, 1.0f64), (1, -1.0)] {
            let sh = kp[5 + side_idx];
            let el = limb(sh, 0.17, art.upper_arm[side_idx], side);
            let wr = limb(el, 0.15, art.upper_arm[side_idx] + art.forearm[side_idx], side);
            kp[7 + side_idx] = el;
            kp[9 + side_idx] = wr;
            let hip = kp[11 + side_idx];
            let kn = limb(hip, 0.23, art.thigh[side_idx], side);
            let an = limb(kn, 0.23, art.thigh[side_idx] + art.shin[side_idx], side);
            kp[13 + side_idx] = kn;
            kp[15 + side_idx] = an;
        }
        let keypoints: Vec<(f64, f64)> = kp.iter().map(|&(x, y)| to_px(x, y)).collect();
        let k = &keypoints;
        let arm_w = 0.035 * scale;
        let leg_w = 0.05 * scale;
        let head_c = to_px(0.0, -0.43);
        let torso_c = to_px(0.0, -0.14);
        let parts = vec![
            Ellipse {
                cx: head_c.0,
                cy: head_c.1,
                a: 0.08 * scale,
                b: 0.065 * scale,
                angle: art.lean + std::f64::consts::FRAC_PI_2,
            },
            Ellipse {
                cx: torso_c.0,
                cy: torso_c.1,
                a: 0.2 * scale,
                b: 0.12 * scale,
                angle: art.lean + std::f64::consts::FRAC_PI_2,
            },
            Ellipse::segment(k[5], k[7], arm_w),
            Ellipse::segment(k[6], k[8], arm_w),
            Ellipse::segment(k[7], k[9], arm_w),
            Ellipse::segment(k[8], k[10], arm_w),
            Ellipse::segment(k[11], k[13], leg_w),
            Ellipse::segment(k[12], k[14], leg_w),
            Ellipse::segment(k[13], k[15], leg_w),
            Ellipse::segment(k[14], k[16], leg_w),
        ];
        Self { keypoints, parts }
    }

    /// Unclipped extent `(x0, y0, x1, y1)` of all parts.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        self.parts
            .iter()
            .map(|e| e.extent())
            .fold((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| {
                (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3))
            })
    }
}
