use std::collections::{HashMap, HashSet};

use serde_json::{json, Map, Value};

use super::{parse_json, rasterize_polygons, rle_from_coco_string, rle_to_coco_string, CocoError, RleMask};
use crate::geometry::BBox;

/// COCO keypoint flag: 0 unlabeled, 1 labeled but not visible, 2 labeled and visible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub flag: u8,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, flag: u8) -> Self {
        Self { x, y, flag }
    }

    pub fn unlabeled() -> Self {
        Self { x: 0.0, y: 0.0, flag: 0 }
    }

    pub fn is_labeled(&self) -> bool {
        self.flag > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    pub extra: Map<String, Value>,
}

impl ImageInfo {
    pub fn new(id: u64, width: u32, height: u32, file_name: impl Into<String>) -> Self {
        Self { id, width, height, file_name: file_name.into(), extra: Map::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub id: u64,
    pub name: String,
    pub keypoints: Vec<String>,
    /// Per-keypoint OKS constants. Falls back to the COCO person sigmas for
    /// 17-keypoint categories when the file does not carry its own.
    pub sigmas: Option<Vec<f64>>,
    pub extra: Map<String, Value>,
}

impl Category {
    /// The COCO `person` category with its 17 keypoint names and sigmas.
    pub fn coco_person() -> Self {
        Self {
            id: 1,
            name: "person".into(),
            keypoints: crate::COCO_KEYPOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            sigmas: Some(crate::COCO_SIGMAS.to_vec()),
            extra: Map::new(),
        }
    }

    /// Sigmas usable for OKS, if the category defines keypoints.
    pub fn effective_sigmas(&self) -> Option<Vec<f64>> {
        match &self.sigmas {
            Some(s) if !s.is_empty() => Some(s.clone()),
            _ if self.keypoints.len() == crate::COCO_SIGMAS.len() => Some(crate::COCO_SIGMAS.to_vec()),
            _ => None,
        }
    }
}

/// One annotated person.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub mask: Option<RleMask>,
    pub keypoints: Vec<Keypoint>,
    pub num_keypoints: u32,
    pub iscrowd: bool,
    pub ignore: bool,
    pub area: f64,
    /// Added by an annotation merge without a mask; excluded from segm evaluation.
    pub keypoints_only: bool,
    pub extra: Map<String, Value>,
}

impl Instance {
    pub fn new(id: u64, image_id: u64, bbox: BBox) -> Self {
        Self {
            id,
            image_id,
            category_id: 1,
            bbox,
            mask: None,
            keypoints: Vec::new(),
            num_keypoints: 0,
            iscrowd: false,
            ignore: false,
            area: bbox.area(),
            keypoints_only: false,
            extra: Map::new(),
        }
    }

    pub fn with_mask(mut self, mask: RleMask) -> Self {
        self.area = mask.area() as f64;
        self.mask = Some(mask);
        self
    }

    pub fn with_keypoints(mut self, keypoints: Vec<Keypoint>) -> Self {
        self.num_keypoints = keypoints.iter().filter(|k| k.is_labeled()).count() as u32;
        self.keypoints = keypoints;
        self
    }

    pub fn labeled_keypoints(&self) -> u32 {
        self.keypoints.iter().filter(|k| k.is_labeled()).count() as u32
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub instances: Vec<Instance>,
    pub categories: Vec<Category>,
    pub extra: Map<String, Value>,
}

impl AnnotationSet {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Instance indices grouped by image id, in image order.
    pub fn instances_by_image(&self) -> Vec<(u64, Vec<usize>)> {
        let mut groups: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, inst) in self.instances.iter().enumerate() {
            groups.entry(inst.image_id).or_default().push(i);
        }
        self.images.iter().map(|img| (img.id, groups.remove(&img.id).unwrap_or_default())).collect()
    }

    pub fn max_instance_id(&self) -> u64 {
        self.instances.iter().map(|i| i.id).max().unwrap_or(0)
    }

    /// Checks referential integrity, id uniqueness and keypoint array lengths.
    pub fn validate(&self) -> Result<(), CocoError> {
        let image_ids: HashSet<u64> = self.images.iter().map(|i| i.id).collect();
        let dangling: Vec<u64> =
            self.instances.iter().filter(|i| !image_ids.contains(&i.image_id)).map(|i| i.id).collect();
        if !dangling.is_empty() {
            return Err(CocoError::DanglingImage { instance_ids: dangling });
        }
        if !self.categories.is_empty() {
            let cat_ids: HashSet<u64> = self.categories.iter().map(|c| c.id).collect();
            let bad: Vec<u64> =
                self.instances.iter().filter(|i| !cat_ids.contains(&i.category_id)).map(|i| i.id).collect();
            if !bad.is_empty() {
                return Err(CocoError::DanglingCategory { instance_ids: bad });
            }
        }
        let mut seen = HashSet::new();
        for inst in &self.instances {
            if !seen.insert(inst.id) {
                return Err(CocoError::DuplicateId(inst.id));
            }
            if let Some(cat) = self.category(inst.category_id) {
                if !inst.keypoints.is_empty()
                    && !cat.keypoints.is_empty()
                    && inst.keypoints.len() != cat.keypoints.len()
                {
                    return Err(CocoError::Invalid(format!(
                        "instance {} has {} keypoints, category {} declares {}",
                        inst.id,
                        inst.keypoints.len(),
                        cat.id,
                        cat.keypoints.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn get_u64(obj: &Map<String, Value>, key: &str, ctx: &str) -> Result<u64, CocoError> {
    match obj.get(key) {
        Some(Value::Number(n)) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64))
            .ok_or_else(|| CocoError::Invalid(format!("{ctx}: `{key}` is not a non-negative integer"))),
        _ => Err(CocoError::Invalid(format!("{ctx}: missing integer field `{key}`"))),
    }
}

fn get_flag(obj: &Map<String, Value>, key: &str) -> bool {
    match obj.get(key) {
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) => n.as_f64().is_some_and(|f| f != 0.0),
        _ => false,
    }
}

fn get_f64_array(v: &Value, ctx: &str) -> Result<Vec<f64>, CocoError> {
    let arr = v.as_array().ok_or_else(|| CocoError::Invalid(format!("{ctx}: expected a numeric array")))?;
    arr.iter().map(|x| x.as_f64().ok_or_else(|| CocoError::Invalid(format!("{ctx}: non-numeric entry")))).collect()
}

/// Decodes any COCO segmentation form. Polygons need the image size.
pub(crate) fn parse_segmentation(v: &Value, image_size: Option<(u32, u32)>, ctx: &str) -> Result<RleMask, CocoError> {
    match v {
        Value::Array(polys) => {
            let (h, w) = image_size
                .ok_or_else(|| CocoError::Invalid(format!("{ctx}: polygon segmentation needs image size")))?;
            let polys = polys.iter().map(|p| get_f64_array(p, ctx)).collect::<Result<Vec<_>, _>>()?;
            Ok(rasterize_polygons(&polys, h, w))
        }
        Value::Object(obj) => {
            let size = obj
                .get("size")
                .and_then(|s| s.as_array())
                .filter(|s| s.len() == 2)
                .and_then(|s| Some((s[0].as_u64()? as u32, s[1].as_u64()? as u32)))
                .ok_or_else(|| CocoError::Invalid(format!("{ctx}: RLE segmentation without a valid `size`")))?;
            match obj.get("counts") {
                Some(Value::String(s)) => Ok(rle_from_coco_string(s, size)?),
                Some(Value::Array(a)) => {
                    let counts = a
                        .iter()
                        .map(|c| c.as_u64().map(|c| c as u32))
                        .collect::<Option<Vec<u32>>>()
                        .ok_or_else(|| CocoError::Invalid(format!("{ctx}: non-integer RLE counts")))?;
                    Ok(RleMask::new(size.0, size.1, counts)?)
                }
                _ => Err(CocoError::Invalid(format!("{ctx}: RLE segmentation without `counts`"))),
            }
        }
        _ => Err(CocoError::Invalid(format!("{ctx}: unsupported segmentation value"))),
    }
}

pub(crate) fn segmentation_json(mask: &RleMask) -> Value {
    json!({ "size": [mask.height, mask.width], "counts": rle_to_coco_string(mask) })
}

fn parse_image(v: &Value) -> Result<ImageInfo, CocoError> {
    let mut obj = v.as_object().cloned().ok_or_else(|| CocoError::Invalid("image entry is not an object".into()))?;
    let id = get_u64(&obj, "id", "image")?;
    let ctx = format!("image {id}");
    let width = get_u64(&obj, "width", &ctx)? as u32;
    let height = get_u64(&obj, "height", &ctx)? as u32;
    if width == 0 || height == 0 {
        return Err(CocoError::Invalid(format!("{ctx}: zero image dimension")));
    }
    let file_name = obj.get("file_name").and_then(|f| f.as_str()).unwrap_or_default().to_string();
    for k in ["id", "width", "height", "file_name"] {
        obj.remove(k);
    }
    Ok(ImageInfo { id, width, height, file_name, extra: obj })
}

fn parse_category(v: &Value) -> Result<Category, CocoError> {
    let mut obj = v.as_object().cloned().ok_or_else(|| CocoError::Invalid("category entry is not an object".into()))?;
    let id = get_u64(&obj, "id", "category")?;
    let name = obj.get("name").and_then(|n| n.as_str()).unwrap_or_default().to_string();
    let keypoints = match obj.get("keypoints") {
        Some(Value::Array(a)) => a.iter().map(|k| k.as_str().unwrap_or_default().to_string()).collect(),
        _ => Vec::new(),
    };
    let sigmas = match obj.get("sigmas") {
        Some(v) => Some(get_f64_array(v, &format!("category {id} sigmas"))?),
        None => None,
    };
    if let Some(s) = &sigmas {
        if !keypoints.is_empty() && s.len() != keypoints.len() {
            return Err(CocoError::Invalid(format!(
                "category {id}: {} sigmas for {} keypoints",
                s.len(),
                keypoints.len()
            )));
        }
    }
    for k in ["id", "name", "keypoints", "sigmas"] {
        obj.remove(k);
    }
    Ok(Category { id, name, keypoints, sigmas, extra: obj })
}

fn parse_instance(v: &Value, images: &HashMap<u64, (u32, u32)>) -> Result<Instance, CocoError> {
    let mut obj =
        v.as_object().cloned().ok_or_else(|| CocoError::Invalid("annotation entry is not an object".into()))?;
    let id = get_u64(&obj, "id", "annotation")?;
    let ctx = format!("annotation {id}");
    let image_id = get_u64(&obj, "image_id", &ctx)?;
    let category_id = if obj.contains_key("category_id") { get_u64(&obj, "category_id", &ctx)? } else { 1 };
    let image_size = images.get(&image_id).copied();

    let mask = match obj.get("segmentation") {
        None | Some(Value::Null) => None,
        Some(Value::Array(a)) if a.is_empty() => None,
        Some(seg) => Some(parse_segmentation(seg, image_size, &ctx)?),
    };

    let keypoints = match obj.get("keypoints") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => {
            let flat = get_f64_array(v, &ctx)?;
            if flat.len() % 3 != 0 {
                return Err(CocoError::Invalid(format!(
                    "{ctx}: keypoint array length {} not a multiple of 3",
                    flat.len()
                )));
            }
            flat.chunks(3)
                .map(|c| {
                    let flag = c[2];
                    if !(flag == 0.0 || flag == 1.0 || flag == 2.0) {
                        return Err(CocoError::Invalid(format!("{ctx}: keypoint flag {flag} outside {{0,1,2}}")));
                    }
                    Ok(Keypoint::new(c[0], c[1], flag as u8))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let labeled = keypoints.iter().filter(|k| k.is_labeled()).count() as u32;
    if let Some(stored) = obj.get("num_keypoints").and_then(|n| n.as_u64()) {
        if stored as u32 != labeled {
            log::warn!("{ctx}: num_keypoints {stored} disagrees with {labeled} labeled keypoints; using {labeled}");
        }
    }

    let bbox = match obj.get("bbox") {
        Some(b) => {
            let v = get_f64_array(b, &ctx)?;
            if v.len() != 4 {
                return Err(CocoError::Invalid(format!("{ctx}: bbox must have 4 entries")));
            }
            BBox::new(v[0], v[1], v[2], v[3])
        }
        None => {
            if let Some(b) = mask.as_ref().and_then(|m| m.bbox()) {
                BBox::from(b)
            } else if labeled > 0 {
                keypoint_extent(&keypoints)
            } else {
                return Err(CocoError::Invalid(format!("{ctx}: no bbox and nothing to derive one from")));
            }
        }
    };
    if bbox.is_degenerate() {
        log::warn!("{ctx}: degenerate bbox {:?}", <[f64; 4]>::from(bbox));
    }

    let stored_area = obj.get("area").and_then(|a| a.as_f64());
    let area = match (&mask, stored_area) {
        (Some(m), Some(a)) => {
            let ma = m.area() as f64;
            if (ma - a).abs() > 1.0 {
                log::warn!("{ctx}: stored area {a} disagrees with mask area {ma}; using mask area");
                ma
            } else {
                a
            }
        }
        (None, Some(a)) => a,
        (Some(m), None) => m.area() as f64,
        (None, None) => bbox.area(),
    };

    let iscrowd = get_flag(&obj, "iscrowd");
    let ignore = get_flag(&obj, "ignore");
    let keypoints_only = get_flag(&obj, "keypoints_only");
    for k in [
        "id",
        "image_id",
        "category_id",
        "segmentation",
        "keypoints",
        "num_keypoints",
        "bbox",
        "area",
        "iscrowd",
        "ignore",
        "keypoints_only",
    ] {
        obj.remove(k);
    }
    Ok(Instance {
        id,
        image_id,
        category_id,
        bbox,
        mask,
        keypoints,
        num_keypoints: labeled,
        iscrowd,
        ignore,
        area,
        keypoints_only,
        extra: obj,
    })
}

/// Box spanning the labeled keypoints (as the reference results loader does).
pub(crate) fn keypoint_extent(kps: &[Keypoint]) -> BBox {
    let labeled: Vec<&Keypoint> = kps.iter().filter(|k| k.is_labeled()).collect();
    let x0 = labeled.iter().map(|k| k.x).fold(f64::INFINITY, f64::min);
    let x1 = labeled.iter().map(|k| k.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = labeled.iter().map(|k| k.y).fold(f64::INFINITY, f64::min);
    let y1 = labeled.iter().map(|k| k.y).fold(f64::NEG_INFINITY, f64::max);
    BBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// Parses a COCO annotation document.
pub fn parse_annotation_set(bytes: &[u8]) -> Result<AnnotationSet, CocoError> {
    let root = parse_json(bytes)?;
    let Value::Object(mut root) = root else {
        return Err(CocoError::Invalid("annotation document must be a JSON object".into()));
    };
    let take_array = |root: &mut Map<String, Value>, key: &str| -> Result<Vec<Value>, CocoError> {
        match root.remove(key) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(a)) => Ok(a),
            Some(_) => Err(CocoError::Invalid(format!("`{key}` must be an array"))),
        }
    };
    let images = take_array(&mut root, "images")?.iter().map(parse_image).collect::<Result<Vec<_>, _>>()?;
    let categories = take_array(&mut root, "categories")?.iter().map(parse_category).collect::<Result<Vec<_>, _>>()?;
    let sizes: HashMap<u64, (u32, u32)> = images.iter().map(|i| (i.id, (i.height, i.width))).collect();
    let instances = take_array(&mut root, "annotations")?
        .iter()
        .map(|a| parse_instance(a, &sizes))
        .collect::<Result<Vec<_>, _>>()?;
    let set = AnnotationSet { images, instances, categories, extra: root };
    set.validate()?;
    Ok(set)
}

fn instance_json(inst: &Instance) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), json!(inst.id));
    obj.insert("image_id".into(), json!(inst.image_id));
    obj.insert("category_id".into(), json!(inst.category_id));
    obj.insert("bbox".into(), json!(<[f64; 4]>::from(inst.bbox)));
    obj.insert("area".into(), json!(inst.area));
    obj.insert("iscrowd".into(), json!(inst.iscrowd as u8));
    if inst.ignore {
        obj.insert("ignore".into(), json!(1));
    }
    if let Some(m) = &inst.mask {
        obj.insert("segmentation".into(), segmentation_json(m));
    }
    if !inst.keypoints.is_empty() {
        let flat: Vec<Value> = inst.keypoints.iter().flat_map(|k| [json!(k.x), json!(k.y), json!(k.flag)]).collect();
        obj.insert("keypoints".into(), Value::Array(flat));
        obj.insert("num_keypoints".into(), json!(inst.num_keypoints));
    }
    if inst.keypoints_only {
        obj.insert("keypoints_only".into(), json!(true));
    }
    for (k, v) in &inst.extra {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

pub(crate) fn annotation_set_json(set: &AnnotationSet) -> Value {
    let mut root = Map::new();
    for (k, v) in &set.extra {
        root.insert(k.clone(), v.clone());
    }
    let images: Vec<Value> = set
        .images
        .iter()
        .map(|i| {
            let mut o = Map::new();
            o.insert("id".into(), json!(i.id));
            o.insert("width".into(), json!(i.width));
            o.insert("height".into(), json!(i.height));
            o.insert("file_name".into(), json!(i.file_name));
            o.extend(i.extra.clone());
            Value::Object(o)
        })
        .collect();
    let categories: Vec<Value> = set
        .categories
        .iter()
        .map(|c| {
            let mut o = Map::new();
            o.insert("id".into(), json!(c.id));
            o.insert("name".into(), json!(c.name));
            if !c.keypoints.is_empty() {
                o.insert("keypoints".into(), json!(c.keypoints));
            }
            if let Some(s) = &c.sigmas {
                o.insert("sigmas".into(), json!(s));
            }
            o.extend(c.extra.clone());
            Value::Object(o)
        })
        .collect();
    root.insert("images".into(), Value::Array(images));
    root.insert("annotations".into(), Value::Array(set.instances.iter().map(instance_json).collect()));
    root.insert("categories".into(), Value::Array(categories));
    Value::Object(root)
}

/// Serializes to a COCO annotation document. Masks are written in compressed RLE form.
pub fn serialize_annotation_set(set: &AnnotationSet) -> Vec<u8> {
    serde_json::to_vec(&annotation_set_json(set)).expect("JSON values always serialize")
}
