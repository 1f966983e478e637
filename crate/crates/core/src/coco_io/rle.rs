//! Column-major run-length masks and the COCO compressed string codec.
//!
//! Runs alternate background/foreground starting with background, so a mask
//! whose first pixel is set starts with a zero-length run. The string form is
//! the same variable-length scheme used by the reference `maskApi.c`: each
//! value is split into 5-bit groups with a continuation bit (0x20) and offset
//! by 48 into printable ASCII; values from index 3 onward are stored as the
//! difference to the run two positions back.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BitMask;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RleError {
    #[error("mask dimensions must be positive, got {height}x{width}")]
    EmptyDimensions { height: u32, width: u32 },
    #[error("corrupt mask: runs sum to {sum}, expected {expected}")]
    RunSumMismatch { sum: u64, expected: u64 },
    #[error("truncated compressed RLE string at byte {offset}")]
    Truncated { offset: usize },
    #[error("invalid byte {byte:#04x} in compressed RLE string at offset {offset}")]
    InvalidByte { byte: u8, offset: usize },
    #[error("negative run length {value} decoded at position {index}")]
    NegativeRun { value: i64, index: usize },
    #[error("mask size mismatch: {a:?} vs {b:?}")]
    SizeMismatch { a: (u32, u32), b: (u32, u32) },
}

/// A binary mask stored as alternating background/foreground runs in
/// column-major (Fortran) pixel order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Builds a mask after checking that the runs cover exactly `height * width` pixels.
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, RleError> {
        if height == 0 || width == 0 {
            return Err(RleError::EmptyDimensions { height, width });
        }
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        let expected = height as u64 * width as u64;
        if sum != expected {
            return Err(RleError::RunSumMismatch { sum, expected });
        }
        Ok(Self { height, width, counts })
    }

    /// An all-background mask.
    pub fn empty(height: u32, width: u32) -> Self {
        Self { height, width, counts: vec![height * width] }
    }

    pub fn size(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn n_pixels(&self) -> u64 {
        self.height as u64 * self.width as u64
    }

    /// Foreground pixel count, summed over the odd runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// True when no interior run is zero and the last run is non-zero
    /// (unless it is the only run). This is the form `rle_encode` produces.
    pub fn is_canonical(&self) -> bool {
        if self.counts.is_empty() {
            return false;
        }
        let n = self.counts.len();
        self.counts.iter().enumerate().all(|(i, &c)| c > 0 || (i == 0 && n > 1))
    }

    /// Re-encodes runs so that zero-length interior runs are merged away.
    pub fn canonicalize(&self) -> Self {
        let mut runs: Vec<(bool, u32)> = Vec::with_capacity(self.counts.len());
        for (i, &c) in self.counts.iter().enumerate() {
            let value = i % 2 == 1;
            match runs.last_mut() {
                _ if c == 0 => {}
                Some((v, len)) if *v == value => *len += c,
                _ => runs.push((value, c)),
            }
        }
        let mut counts: Vec<u32> = Vec::with_capacity(runs.len() + 1);
        if matches!(runs.first(), Some((true, _))) {
            counts.push(0);
        }
        counts.extend(runs.iter().map(|&(_, c)| c));
        if counts.is_empty() {
            counts.push(self.height * self.width);
        }
        Self { height: self.height, width: self.width, counts }
    }

    /// Iterates `(start, len)` of foreground runs in column-major pixel indices.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1 && c > 0).then_some((start, c as u64))
        })
    }

    /// Tight `(x, y, w, h)` box around the foreground, or `None` for an empty mask.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let h = self.height as u64;
        let (mut xs, mut xe, mut ys, mut ye) = (u64::MAX, 0u64, u64::MAX, 0u64);
        let mut any = false;
        for (start, len) in self.foreground_runs() {
            any = true;
            let end = start + len - 1;
            let (x1, y1) = (start / h, start % h);
            let (x2, y2) = (end / h, end % h);
            xs = xs.min(x1);
            xe = xe.max(x2 + 1);
            if x1 != x2 {
                ys = 0;
                ye = h;
            } else {
                ys = ys.min(y1);
                ye = ye.max(y2 + 1);
            }
        }
        any.then(|| [xs as f64, ys as f64, (xe - xs) as f64, (ye - ys) as f64])
    }

    /// Whether pixel `(x, y)` is foreground. Out-of-bounds pixels are background.
    pub fn contains(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return false;
        }
        let idx = x as u64 * self.height as u64 + y as u64;
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            pos += c as u64;
            if idx < pos {
                return i % 2 == 1;
            }
        }
        false
    }
}

/// Encodes a bitmask into canonical runs.
pub fn rle_encode(mask: &BitMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for v in mask.iter_column_major() {
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    RleMask { height: mask.height(), width: mask.width(), counts }
}

/// Expands runs back into a bitmask.
pub fn rle_decode(mask: &RleMask) -> Result<BitMask, RleError> {
    let expected = mask.n_pixels();
    let sum: u64 = mask.counts.iter().map(|&c| c as u64).sum();
    if sum != expected {
        return Err(RleError::RunSumMismatch { sum, expected });
    }
    let mut out = BitMask::new(mask.width, mask.height)
        .map_err(|_| RleError::EmptyDimensions { height: mask.height, width: mask.width })?;
    for (start, len) in mask.foreground_runs() {
        for idx in start..start + len {
            out.set_column_major(idx as usize, true);
        }
    }
    Ok(out)
}

/// Serializes runs with the COCO compressed string scheme.
pub fn rle_to_coco_string(mask: &RleMask) -> String {
    let mut out = Vec::with_capacity(mask.counts.len() * 2);
    for (i, &c) in mask.counts.iter().enumerate() {
        let mut x = c as i64;
        if i > 2 {
            x -= mask.counts[i - 2] as i64;
        }
        loop {
            let mut chunk = (x & 0x1f) as u8;
            x >>= 5;
            let more = if chunk & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                chunk |= 0x20;
            }
            out.push(chunk + 48);
            if !more {
                break;
            }
        }
    }
    // every byte is in 48..=111
    String::from_utf8(out).expect("compressed RLE is ASCII")
}

/// Parses the COCO compressed string form for an image of `(height, width)`.
pub fn rle_from_coco_string(text: &str, size: (u32, u32)) -> Result<RleMask, RleError> {
    let bytes = text.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut p = 0usize;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0u32;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(RleError::Truncated { offset: p });
            };
            if !(48..48 + 64).contains(&b) {
                return Err(RleError::InvalidByte { byte: b, offset: p });
            }
            if k >= 12 {
                return Err(RleError::InvalidByte { byte: b, offset: p });
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        let m = counts.len();
        if m > 2 {
            x += counts[m - 2] as i64;
        }
        if x < 0 || x > u32::MAX as i64 {
            return Err(RleError::NegativeRun { value: x, index: m });
        }
        counts.push(x as u32);
    }
    RleMask::new(size.0, size.1, counts)
}
