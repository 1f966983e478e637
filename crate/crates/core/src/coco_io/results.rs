use std::collections::HashMap;

use serde_json::{json, Map, Value};

use super::annotation::{parse_segmentation, segmentation_json};
use super::{parse_json, rasterize_polygons, AnnotationSet, CocoError, RleMask};
use crate::geometry::BBox;

/// Predicted keypoint: location plus the per-keypoint score column of the results format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedKeypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// One scored result entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Sequential id starting at 1, assigned in file order.
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub bbox: Option<BBox>,
    pub mask: Option<RleMask>,
    pub keypoints: Option<Vec<PredictedKeypoint>>,
    /// Set by [`PredictionSet::resolve`] when the image is not in the ground truth.
    pub unknown_image: bool,
    pub extra: Map<String, Value>,
    pending_polygons: Option<Vec<Vec<f64>>>,
}

impl Prediction {
    pub fn new(image_id: u64, score: f64) -> Self {
        Self {
            id: 0,
            image_id,
            category_id: 1,
            score,
            bbox: None,
            mask: None,
            keypoints: None,
            unknown_image: false,
            extra: Map::new(),
            pending_polygons: None,
        }
    }

    pub fn with_bbox(mut self, bbox: BBox) -> Self {
        self.bbox = Some(bbox);
        self
    }

    pub fn with_mask(mut self, mask: RleMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn with_keypoints(mut self, kps: Vec<PredictedKeypoint>) -> Self {
        self.keypoints = Some(kps);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub predictions: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(mut predictions: Vec<Prediction>) -> Self {
        for (i, p) in predictions.iter_mut().enumerate() {
            p.id = i as u64 + 1;
        }
        Self { predictions }
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Flags predictions on images absent from `gt` and rasterizes polygon
    /// results now that image sizes are known.
    pub fn resolve(&mut self, gt: &AnnotationSet) {
        let sizes: HashMap<u64, (u32, u32)> = gt.images.iter().map(|i| (i.id, (i.height, i.width))).collect();
        for p in &mut self.predictions {
            match sizes.get(&p.image_id) {
                Some(&(h, w)) => {
                    p.unknown_image = false;
                    if let Some(polys) = p.pending_polygons.take() {
                        p.mask = Some(rasterize_polygons(&polys, h, w));
                    }
                }
                None => p.unknown_image = true,
            }
        }
    }
}

fn parse_prediction(index: usize, v: &Value) -> Result<Prediction, CocoError> {
    let mut obj =
        v.as_object().cloned().ok_or_else(|| CocoError::Invalid(format!("result {index} is not an object")))?;
    let int = |obj: &Map<String, Value>, key: &str| -> Result<u64, CocoError> {
        obj.get(key)
            .and_then(|x| x.as_u64().or_else(|| x.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64)))
            .ok_or_else(|| CocoError::Invalid(format!("result {index}: missing integer `{key}`")))
    };
    let image_id = int(&obj, "image_id")?;
    let category_id = if obj.contains_key("category_id") { int(&obj, "category_id")? } else { 1 };
    let score = obj.get("score").and_then(|s| s.as_f64()).ok_or(CocoError::MissingScore { index })?;
    if !(0.0..=1.0).contains(&score) {
        return Err(CocoError::ScoreRange { index, score });
    }
    let ctx = format!("result {index}");
    let bbox = match obj.get("bbox") {
        Some(b) => {
            let a = b
                .as_array()
                .filter(|a| a.len() == 4)
                .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<f64>>>())
                .ok_or_else(|| CocoError::Invalid(format!("{ctx}: bbox must be 4 numbers")))?;
            Some(BBox::new(a[0], a[1], a[2], a[3]))
        }
        None => None,
    };
    let (mask, pending_polygons) = match obj.get("segmentation") {
        None | Some(Value::Null) => (None, None),
        Some(Value::Array(polys)) => {
            let polys = polys
                .iter()
                .map(|p| {
                    p.as_array()
                        .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<f64>>>())
                        .ok_or_else(|| CocoError::Invalid(format!("{ctx}: bad polygon")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (None, Some(polys))
        }
        Some(seg) => (Some(parse_segmentation(seg, None, &ctx)?), None),
    };
    let keypoints = match obj.get("keypoints") {
        None | Some(Value::Null) => None,
        Some(k) => {
            let flat = k
                .as_array()
                .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<f64>>>())
                .filter(|f| f.len() % 3 == 0)
                .ok_or_else(|| CocoError::Invalid(format!("{ctx}: keypoints must be 3*K numbers")))?;
            Some(flat.chunks(3).map(|c| PredictedKeypoint { x: c[0], y: c[1], score: c[2] }).collect())
        }
    };
    for k in ["image_id", "category_id", "score", "bbox", "segmentation", "keypoints", "id"] {
        obj.remove(k);
    }
    Ok(Prediction {
        id: index as u64 + 1,
        image_id,
        category_id,
        score,
        bbox,
        mask,
        keypoints,
        unknown_image: false,
        extra: obj,
        pending_polygons,
    })
}

/// Parses a COCO results document (a flat JSON list of scored entries).
pub fn parse_prediction_set(bytes: &[u8]) -> Result<PredictionSet, CocoError> {
    let root = parse_json(bytes)?;
    let Value::Array(items) = root else {
        return Err(CocoError::Invalid("results document must be a JSON array".into()));
    };
    let predictions = items.iter().enumerate().map(|(i, v)| parse_prediction(i, v)).collect::<Result<_, _>>()?;
    Ok(PredictionSet { predictions })
}

pub fn serialize_prediction_set(set: &PredictionSet) -> Vec<u8> {
    let items: Vec<Value> = set
        .predictions
        .iter()
        .map(|p| {
            let mut o = Map::new();
            o.insert("image_id".into(), json!(p.image_id));
            o.insert("category_id".into(), json!(p.category_id));
            o.insert("score".into(), json!(p.score));
            if let Some(b) = p.bbox {
                o.insert("bbox".into(), json!(<[f64; 4]>::from(b)));
            }
            if let Some(m) = &p.mask {
                o.insert("segmentation".into(), segmentation_json(m));
            }
            if let Some(k) = &p.keypoints {
                let flat: Vec<f64> = k.iter().flat_map(|k| [k.x, k.y, k.score]).collect();
                o.insert("keypoints".into(), json!(flat));
            }
            o.extend(p.extra.clone());
            Value::Object(o)
        })
        .collect();
    serde_json::to_vec(&Value::Array(items)).expect("JSON values always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_keypoint_results() {
        let d = r#"[{"image_id": 1, "category_id": 1, "score": 0.9, "keypoints": [1,2,1, 3,4,1]},
                    {"image_id": 1, "category_id": 1, "score": 0.5, "keypoints": [1,2,1, 3,4,0.5]}]"#;
        let set = parse_prediction_set(d.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.predictions[1].id, 2);
    }

    #[test]
    fn empty_list() {
        assert!(parse_prediction_set(b"[]").unwrap().is_empty());
    }

    #[test]
    fn score_validation() {
        assert!(matches!(
            parse_prediction_set(br#"[{"image_id": 1, "bbox": [0,0,1,1]}]"#),
            Err(CocoError::MissingScore { index: 0 })
        ));
        assert!(matches!(
            parse_prediction_set(br#"[{"image_id": 1, "score": 1.5, "bbox": [0,0,1,1]}]"#),
            Err(CocoError::ScoreRange { .. })
        ));
    }

    #[test]
    fn unknown_image_is_flagged_not_dropped() {
        let mut set = parse_prediction_set(
            br#"[{"image_id": 1, "score": 0.3, "bbox": [0,0,1,1]}, {"image_id": 42, "score": 0.3, "bbox": [0,0,1,1]}]"#,
        )
        .unwrap();
        let mut gt = AnnotationSet::default();
        gt.images.push(super::super::ImageInfo::new(1, 4, 4, "x"));
        set.resolve(&gt);
        assert!(!set.predictions[0].unknown_image);
        assert!(set.predictions[1].unknown_image);
        assert_eq!(set.len(), 2);
    }
}
