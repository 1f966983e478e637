use super::{BitMask, GeometryError};
use crate::coco_io::{rle_decode, rle_encode, RleMask};

/// Splits a column-major label map (0 = background, `1..=n_labels`) into one
/// mask per label in a single scan.
pub fn masks_from_labels(labels: &[u16], height: u32, width: u32, n_labels: usize) -> Vec<RleMask> {
    assert_eq!(labels.len(), height as usize * width as usize, "label map size");
    let mut counts: Vec<Vec<u32>> = vec![Vec::new(); n_labels];
    let mut last_end = vec![0usize; n_labels];
    let mut i = 0usize;
    while i < labels.len() {
        let l = labels[i];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == l {
            j += 1;
        }
        if l > 0 && (l as usize) <= n_labels {
            let k = l as usize - 1;
            counts[k].push((i - last_end[k]) as u32);
            counts[k].push((j - i) as u32);
            last_end[k] = j;
        }
        i = j;
    }
    counts
        .into_iter()
        .zip(last_end)
        .map(|(mut c, end)| {
            c.push((labels.len() - end) as u32);
            RleMask { height, width, counts: c }.canonicalize()
        })
        .collect()
}

fn square_filter(mask: &RleMask, radius: u32, grow: bool) -> Result<RleMask, GeometryError> {
    if radius == 0 {
        return Ok(mask.clone());
    }
    let bits = rle_decode(mask).map_err(|_| GeometryError::EmptyMask { width: mask.width, height: mask.height })?;
    let (w, h) = (bits.width() as i64, bits.height() as i64);
    let r = radius as i64;
    let hit = |b: &BitMask, x: i64, y: i64| -> bool {
        if x < 0 || y < 0 || x >= w || y >= h {
            !grow
        } else {
            b.get(x as u32, y as u32)
        }
    };
    // separable: vertical then horizontal pass
    let pass = |src: &BitMask, dx: i64, dy: i64| -> Result<BitMask, GeometryError> {
        BitMask::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as i64, y as i64);
            let mut acc = !grow;
            for t in -r..=r {
                let v = hit(src, x + t * dx, y + t * dy);
                if grow {
                    acc |= v;
                } else {
                    acc &= v;
                }
            }
            acc
        })
    };
    let vert = pass(&bits, 0, 1)?;
    let both = pass(&vert, 1, 0)?;
    Ok(rle_encode(&both))
}

/// Morphological dilation with a `(2r+1)²` square.
pub fn dilate(mask: &RleMask, radius: u32) -> Result<RleMask, GeometryError> {
    square_filter(mask, radius, true)
}

/// Morphological erosion with a `(2r+1)²` square; pixels beyond the border count as set.
pub fn erode(mask: &RleMask, radius: u32) -> Result<RleMask, GeometryError> {
    square_filter(mask, radius, false)
}
