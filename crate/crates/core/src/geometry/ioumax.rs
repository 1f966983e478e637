use serde::{Deserialize, Serialize};

use super::{bbox_iou_unchecked, mask_iou};
use crate::coco_io::Instance;

/// Geometry actually used for an IoUMax computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Mask,
    Bbox,
}

/// How to pick the IoUMax geometry for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouModePolicy {
    /// Masks when every instance in the image has one, boxes otherwise.
    PreferMask,
    #[default]
    Bbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouMaxResult {
    pub values: Vec<f64>,
    pub mode: IouMode,
}

/// Maximum IoU of each instance against every other instance of the same image.
pub fn iou_max(instances: &[&Instance], policy: IouModePolicy) -> IouMaxResult {
    let use_masks = policy == IouModePolicy::PreferMask
        && !instances.is_empty()
        && instances.iter().all(|i| i.mask.as_ref().is_some_and(|m| m.area() > 0))
        && instances.windows(2).all(|w| w[0].mask.as_ref().map(|m| m.size()) == w[1].mask.as_ref().map(|m| m.size()));
    let n = instances.len();
    let mut values = vec![0.0f64; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let iou = if use_masks {
                // sizes checked above
                mask_iou(instances[i].mask.as_ref().unwrap(), instances[j].mask.as_ref().unwrap(), false).unwrap_or(0.0)
            } else {
                bbox_iou_unchecked(&instances[i].bbox, &instances[j].bbox, false)
            };
            values[i] = values[i].max(iou);
            values[j] = values[j].max(iou);
        }
    }
    IouMaxResult { values, mode: if use_masks { IouMode::Mask } else { IouMode::Bbox } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn inst(id: u64, bbox: BBox, with_mask: bool) -> Instance {
        let mut i = Instance::new(id, 1, bbox);
        if with_mask {
            i.mask = Some(bbox.to_rle(20, 20));
        }
        i
    }

    #[test]
    fn singleton_is_zero() {
        let a = inst(1, BBox::new(1.0, 1.0, 3.0, 3.0), true);
        let r = iou_max(&[&a], IouModePolicy::PreferMask);
        assert_eq!(r.values, vec![0.0]);
    }

    #[test]
    fn identical_masks_are_one() {
        let a = inst(1, BBox::new(1.0, 1.0, 3.0, 3.0), true);
        let b = inst(2, BBox::new(1.0, 1.0, 3.0, 3.0), true);
        let r = iou_max(&[&a, &b], IouModePolicy::PreferMask);
        assert_eq!(r.values, vec![1.0, 1.0]);
        assert_eq!(r.mode, IouMode::Mask);
    }

    #[test]
    fn falls_back_to_boxes_without_masks() {
        let a = inst(1, BBox::new(0.0, 0.0, 2.0, 2.0), true);
        let b = inst(2, BBox::new(1.0, 1.0, 2.0, 2.0), false);
        let r = iou_max(&[&a, &b], IouModePolicy::PreferMask);
        assert_eq!(r.mode, IouMode::Bbox);
        assert!((r.values[0] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_invariant() {
        let v = [
            inst(1, BBox::new(0.0, 0.0, 5.0, 5.0), true),
            inst(2, BBox::new(2.0, 1.0, 5.0, 6.0), true),
            inst(3, BBox::new(9.0, 9.0, 4.0, 4.0), true),
            inst(4, BBox::new(10.0, 8.0, 3.0, 6.0), true),
        ];
        for policy in [IouModePolicy::PreferMask, IouModePolicy::Bbox] {
            let fwd = iou_max(&v.iter().collect::<Vec<_>>(), policy);
            let rev = iou_max(&v.iter().rev().collect::<Vec<_>>(), policy);
            let mut back = rev.values.clone();
            back.reverse();
            assert_eq!(fwd.values, back);
        }
    }
}
