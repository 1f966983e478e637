//! Pixel-level primitives shared by evaluation, dataset tooling and the loop.

mod bitmask;
mod blackout;
mod ioumax;
mod raster;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco_io::RleMask;

pub use bitmask::BitMask;
pub use blackout::{blackout_apply, visible_fraction, BlackoutRaster};
pub use ioumax::{iou_max, IouMaxResult, IouMode, IouModePolicy};
pub use raster::{dilate, erode, masks_from_labels};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box {0:?}: width and height must be positive")]
    DegenerateBox([f64; 4]),
    #[error("mask dimensions must be positive, got {width}x{height}")]
    EmptyMask { width: u32, height: u32 },
    #[error("shape mismatch: {a:?} vs {b:?} (height, width)")]
    ShapeMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("zero-area mask has no visible fraction")]
    ZeroAreaMask,
}

/// Axis-aligned box `(x, y, w, h)` in pixels, serialized as a 4-array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self { x: v[0], y: v[1], w: v[2], h: v[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox::new(x, y, self.right().max(other.right()) - x, self.bottom().max(other.bottom()) - y)
    }

    /// Clips to `[0, width] x [0, height]`; may become degenerate.
    pub fn clip(&self, width: u32, height: u32) -> BBox {
        let x0 = self.x.clamp(0.0, width as f64);
        let y0 = self.y.clamp(0.0, height as f64);
        let x1 = self.right().clamp(0.0, width as f64);
        let y1 = self.bottom().clamp(0.0, height as f64);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Rasterizes the box as the set of pixels whose centers fall inside it.
    pub fn to_rle(&self, height: u32, width: u32) -> RleMask {
        let clipped = self.clip(width, height);
        let x0 = (clipped.x - 0.5).ceil().max(0.0) as u32;
        let x1 = ((clipped.right() - 0.5).ceil().max(0.0) as u32).min(width);
        let y0 = (clipped.y - 0.5).ceil().max(0.0) as u32;
        let y1 = ((clipped.bottom() - 0.5).ceil().max(0.0) as u32).min(height);
        if x0 >= x1 || y0 >= y1 {
            return RleMask::empty(height, width);
        }
        let mut counts = Vec::with_capacity(2 * (x1 - x0) as usize + 1);
        let col_run = y1 - y0;
        let gap = height - col_run;
        counts.push(x0 * height + y0);
        for x in x0..x1 {
            counts.push(col_run);
            if x + 1 < x1 {
                counts.push(gap);
            }
        }
        counts.push((width - x1) * height + (height - y1));
        RleMask { height, width, counts }.canonicalize()
    }
}

/// IoU of two boxes using `area = w * h`.
pub fn bbox_iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    for bx in [a, b] {
        if bx.is_degenerate() {
            return Err(GeometryError::DegenerateBox((*bx).into()));
        }
    }
    Ok(bbox_iou_unchecked(a, b, false))
}

/// Box IoU without validation; with `b_iscrowd` the denominator is `area(a)`.
/// Degenerate denominators yield 0.
pub fn bbox_iou_unchecked(a: &BBox, b: &BBox, b_iscrowd: bool) -> f64 {
    let inter = a.intersection_area(b);
    let denom = if b_iscrowd { a.area() } else { a.area() + b.area() - inter };
    if denom > 0.0 {
        inter / denom
    } else {
        0.0
    }
}

fn check_same_size(a: &RleMask, b: &RleMask) -> Result<(), GeometryError> {
    if a.size() != b.size() {
        return Err(GeometryError::ShapeMismatch { a: a.size(), b: b.size() });
    }
    Ok(())
}

/// Walks two run sequences in lockstep, yielding `(len, a_value, b_value)` segments.
fn walk_runs<'a>(a: &'a RleMask, b: &'a RleMask) -> impl Iterator<Item = (u64, bool, bool)> + 'a {
    let mut ai = 0usize;
    let mut bi = 0usize;
    let mut ra = 0u64;
    let mut rb = 0u64;
    let mut va = true;
    let mut vb = true;
    std::iter::from_fn(move || {
        while ra == 0 {
            if ai >= a.counts.len() {
                return None;
            }
            ra = a.counts[ai] as u64;
            va = ai % 2 == 1;
            ai += 1;
        }
        while rb == 0 {
            if bi >= b.counts.len() {
                return None;
            }
            rb = b.counts[bi] as u64;
            vb = bi % 2 == 1;
            bi += 1;
        }
        let step = ra.min(rb);
        ra -= step;
        rb -= step;
        Some((step, va, vb))
    })
}

fn combine(a: &RleMask, b: &RleMask, op: impl Fn(bool, bool) -> bool) -> Result<RleMask, GeometryError> {
    check_same_size(a, b)?;
    let mut counts: Vec<u32> = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for (len, va, vb) in walk_runs(a, b) {
        let v = op(va, vb);
        if v != current {
            counts.push(run as u32);
            run = 0;
            current = v;
        }
        run += len;
    }
    counts.push(run as u32);
    Ok(RleMask { height: a.height, width: a.width, counts })
}

pub fn mask_union(a: &RleMask, b: &RleMask) -> Result<RleMask, GeometryError> {
    combine(a, b, |x, y| x || y)
}

pub fn mask_intersection(a: &RleMask, b: &RleMask) -> Result<RleMask, GeometryError> {
    combine(a, b, |x, y| x && y)
}

/// Pixels of `a` not in `b`.
pub fn mask_difference(a: &RleMask, b: &RleMask) -> Result<RleMask, GeometryError> {
    combine(a, b, |x, y| x && !y)
}

/// Pixels in exactly one of the two masks.
pub fn mask_xor(a: &RleMask, b: &RleMask) -> Result<RleMask, GeometryError> {
    combine(a, b, |x, y| x != y)
}

pub fn intersection_area(a: &RleMask, b: &RleMask) -> Result<u64, GeometryError> {
    check_same_size(a, b)?;
    Ok(walk_runs(a, b).filter(|&(_, va, vb)| va && vb).map(|(len, _, _)| len).sum())
}

/// Mask IoU on runs. With `b_iscrowd` the denominator is `area(a)`.
pub fn mask_iou(a: &RleMask, b: &RleMask, b_iscrowd: bool) -> Result<f64, GeometryError> {
    let inter = intersection_area(a, b)? as f64;
    let area_a = a.area() as f64;
    let denom = if b_iscrowd { area_a } else { area_a + b.area() as f64 - inter };
    Ok(if denom > 0.0 { inter / denom } else { 0.0 })
}
