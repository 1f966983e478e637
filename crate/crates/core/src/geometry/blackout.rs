use serde::{Deserialize, Serialize};

use super::{intersection_area, mask_union, GeometryError};
use crate::coco_io::RleMask;

/// Union of every mask already processed in a scene. Coverage only grows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlackoutRaster {
    mask: RleMask,
}

impl BlackoutRaster {
    pub fn new(height: u32, width: u32) -> Self {
        Self { mask: RleMask::empty(height, width) }
    }

    pub fn from_mask(mask: RleMask) -> Self {
        Self { mask: mask.canonicalize() }
    }

    pub fn as_rle(&self) -> &RleMask {
        &self.mask
    }

    pub fn size(&self) -> (u32, u32) {
        self.mask.size()
    }

    pub fn coverage(&self) -> u64 {
        self.mask.area()
    }

    pub fn apply(&self, mask: &RleMask) -> Result<Self, GeometryError> {
        blackout_apply(self, mask)
    }
}

/// Returns a new raster covering `raster ∪ mask`.
pub fn blackout_apply(raster: &BlackoutRaster, mask: &RleMask) -> Result<BlackoutRaster, GeometryError> {
    Ok(BlackoutRaster { mask: mask_union(&raster.mask, mask)? })
}

/// Share of `instance_mask` not covered by the raster.
pub fn visible_fraction(instance_mask: &RleMask, raster: &BlackoutRaster) -> Result<f64, GeometryError> {
    let area = instance_mask.area();
    if area == 0 {
        return Err(GeometryError::ZeroAreaMask);
    }
    let covered = intersection_area(instance_mask, &raster.mask)?;
    Ok((area - covered) as f64 / area as f64)
}
