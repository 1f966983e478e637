//! Python bindings: RLE masks, COCO annotation / result sets, evaluation,
//! dataset tools and the seeded simulation.

use bmploop::coco_io::{
    parse_annotation_set, parse_prediction_set, rle_decode, rle_encode, rle_from_coco_string, rle_to_coco_string,
    serialize_annotation_set, serialize_prediction_set,
};
use bmploop::dataset_tools::{apply_legacy_filter, compute_stats, instance_ioumax, merge_annotations, MergePolicy};
use bmploop::evaluator::{evaluate as eval_core, write_summary_json, EvalOptions, SimilarityKind};
use bmploop::geometry::{bbox_iou as bbox_iou_core, mask_iou, BBox, BitMask, IouModePolicy};
use bmploop::simulate::{simulate as simulate_core, SimulationConfig};
use bmploop::synthetic_world::{make_dataset as make_dataset_core, DropRule, WorldConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde_json::Value;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Accepts a JSON string or any object `json.dumps` can handle.
fn from_py(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => py.import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(err)
}

fn text_or_bytes(obj: &Bound<'_, PyAny>) -> PyResult<Vec<u8>> {
    if let Ok(b) = obj.cast::<PyBytes>() {
        return Ok(b.as_bytes().to_vec());
    }
    Ok(obj.extract::<String>()?.into_bytes())
}

fn policy(mode: &str) -> PyResult<IouModePolicy> {
    match mode {
        "bbox" => Ok(IouModePolicy::Bbox),
        "prefer_mask" | "mask" => Ok(IouModePolicy::PreferMask),
        other => Err(PyValueError::new_err(format!("iou_mode must be 'bbox' or 'prefer_mask', got '{other}'"))),
    }
}

fn task(name: &str) -> PyResult<SimilarityKind> {
    match name {
        "bbox" => Ok(SimilarityKind::BboxIoU),
        "segm" => Ok(SimilarityKind::MaskIoU),
        "keypoints" => Ok(SimilarityKind::Oks),
        other => Err(PyValueError::new_err(format!("task must be bbox, segm or keypoints, got '{other}'"))),
    }
}

/// Column-major run-length mask, `counts` alternating background / foreground.
#[pyclass(name = "RleMask", module = "bmploop", eq, from_py_object)]
#[derive(Clone, PartialEq)]
pub struct PyRleMask {
    pub inner: bmploop::coco_io::RleMask,
}

#[pymethods]
impl PyRleMask {
    #[new]
    fn new(height: u32, width: u32, counts: Vec<u32>) -> PyResult<Self> {
        Ok(Self { inner: bmploop::coco_io::RleMask::new(height, width, counts).map_err(err)? })
    }

    /// Parses the compressed COCO counts string.
    #[staticmethod]
    fn from_string(counts: &str, height: u32, width: u32) -> PyResult<Self> {
        Ok(Self { inner: rle_from_coco_string(counts, (height, width)).map_err(err)? })
    }

    /// Encodes rows of truthy values (`rows[y][x]`).
    #[staticmethod]
    fn encode(rows: Vec<Vec<bool>>) -> PyResult<Self> {
        let h = rows.len() as u32;
        let w = rows.first().map_or(0, |r| r.len()) as u32;
        if rows.iter().any(|r| r.len() as u32 != w) {
            return Err(PyValueError::new_err("rows must all have the same length"));
        }
        let m = BitMask::from_fn(w, h, |x, y| rows[y as usize][x as usize]).map_err(err)?;
        Ok(Self { inner: rle_encode(&m) })
    }

    #[staticmethod]
    fn from_bbox(bbox: [f64; 4], height: u32, width: u32) -> Self {
        Self { inner: BBox::new(bbox[0], bbox[1], bbox[2], bbox[3]).to_rle(height, width) }
    }

    fn decode(&self) -> PyResult<Vec<Vec<bool>>> {
        let m = rle_decode(&self.inner).map_err(err)?;
        Ok((0..m.height()).map(|y| (0..m.width()).map(|x| m.get(x, y)).collect()).collect())
    }

    #[pyo3(name = "to_string")]
    fn counts_string(&self) -> String {
        rle_to_coco_string(&self.inner)
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn counts(&self) -> Vec<u32> {
        self.inner.counts.clone()
    }

    fn area(&self) -> u64 {
        self.inner.area()
    }

    /// `[x, y, w, h]`, or None for an empty mask.
    fn bbox(&self) -> Option<[f64; 4]> {
        self.inner.bbox()
    }

    #[pyo3(signature = (other, iscrowd = false))]
    fn iou(&self, other: &PyRleMask, iscrowd: bool) -> PyResult<f64> {
        mask_iou(&self.inner, &other.inner, iscrowd).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("RleMask({}x{}, area={})", self.inner.height, self.inner.width, self.inner.area())
    }
}

/// COCO-format ground truth.
#[pyclass(name = "AnnotationSet", module = "bmploop", from_py_object)]
#[derive(Clone)]
pub struct PyAnnotationSet {
    pub inner: bmploop::coco_io::AnnotationSet,
}

#[pymethods]
impl PyAnnotationSet {
    #[staticmethod]
    fn from_json(data: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self { inner: parse_annotation_set(&text_or_bytes(data)?).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| err(format!("{path}: {e}")))?;
        Ok(Self { inner: parse_annotation_set(&bytes).map_err(err)? })
    }

    fn to_json(&self) -> String {
        String::from_utf8(serialize_annotation_set(&self.inner)).expect("serializer emits UTF-8")
    }

    #[getter]
    fn n_images(&self) -> usize {
        self.inner.images.len()
    }

    fn __len__(&self) -> usize {
        self.inner.instances.len()
    }

    /// Per-instance IoUMax, in instance order.
    #[pyo3(signature = (iou_mode = "bbox"))]
    fn ioumax(&self, iou_mode: &str) -> PyResult<Vec<f64>> {
        Ok(instance_ioumax(&self.inner, policy(iou_mode)?).into_iter().map(|(v, _)| v).collect())
    }

    #[pyo3(signature = (iou_mode = "bbox"))]
    fn stats(&self, py: Python<'_>, iou_mode: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &compute_stats(&self.inner, policy(iou_mode)?).map_err(err)?)
    }

    /// Keeps instances with IoUMax = 0 or IoUMax > 0.5.
    #[pyo3(signature = (iou_mode = "bbox"))]
    fn legacy_filter(&self, iou_mode: &str) -> PyResult<Self> {
        Ok(Self { inner: apply_legacy_filter(&self.inner, policy(iou_mode)?) })
    }

    /// Returns the merged set and the merge report.
    #[pyo3(signature = (additions, dedup_oks_threshold = None))]
    fn merge(
        &self,
        py: Python<'_>,
        additions: &PyAnnotationSet,
        dedup_oks_threshold: Option<f64>,
    ) -> PyResult<(Self, Py<PyAny>)> {
        let mut p = MergePolicy::default();
        if let Some(t) = dedup_oks_threshold {
            p.dedup_oks_threshold = t;
        }
        let (merged, report) = merge_annotations(&self.inner, &additions.inner, &p).map_err(err)?;
        Ok((Self { inner: merged }, to_py(py, &report)?))
    }

    fn __repr__(&self) -> String {
        format!("AnnotationSet(images={}, instances={})", self.inner.images.len(), self.inner.instances.len())
    }
}

/// COCO results file.
#[pyclass(name = "PredictionSet", module = "bmploop", from_py_object)]
#[derive(Clone)]
pub struct PyPredictionSet {
    pub inner: bmploop::coco_io::PredictionSet,
}

#[pymethods]
impl PyPredictionSet {
    #[staticmethod]
    fn from_json(data: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self { inner: parse_prediction_set(&text_or_bytes(data)?).map_err(err)? })
    }

    fn to_json(&self) -> String {
        String::from_utf8(serialize_prediction_set(&self.inner)).expect("serializer emits UTF-8")
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// COCO-style evaluation; returns the summary (ap, ap50, ap75, ar, per-area rows).
#[pyfunction]
#[pyo3(signature = (gt, preds, task = "keypoints", max_dets = None, category_ids = None))]
fn evaluate(
    py: Python<'_>,
    gt: &PyAnnotationSet,
    preds: &PyPredictionSet,
    task: &str,
    max_dets: Option<usize>,
    category_ids: Option<Vec<u64>>,
) -> PyResult<Py<PyAny>> {
    let kind = self::task(task)?;
    let opts = EvalOptions { max_dets, category_ids, ..EvalOptions::default() };
    let report = py.detach(|| eval_core(&preds.inner, &gt.inner, kind, &opts)).map_err(err)?;
    let mut buf = Vec::new();
    write_summary_json(&report, &mut buf).map_err(err)?;
    let v: Value = serde_json::from_slice(&buf).map_err(err)?;
    to_py(py, &v)
}

/// IoU of two `[x, y, w, h]` boxes.
#[pyfunction]
fn bbox_iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    bbox_iou_core(&BBox::new(a[0], a[1], a[2], a[3]), &BBox::new(b[0], b[1], b[2], b[3])).map_err(err)
}

/// Synthetic crowd annotations from a world preset.
#[pyfunction]
#[pyo3(signature = (n_scenes, preset = "och_pose_like", seed = 0, legacy_filter = false))]
fn make_dataset(n_scenes: usize, preset: &str, seed: u64, legacy_filter: bool) -> PyResult<PyAnnotationSet> {
    let mut world = WorldConfig::preset(preset).map_err(err)?;
    world.seed = seed;
    let rule = if legacy_filter { DropRule::Legacy } else { DropRule::None };
    let data = make_dataset_core(&world, n_scenes, rule).map_err(err)?;
    Ok(PyAnnotationSet { inner: if legacy_filter { data.filtered } else { data.complete } })
}

/// Runs the seeded experiments. `config` is a dict or JSON string in the
/// simulation config schema; omitted fields keep their defaults.
#[pyfunction]
#[pyo3(signature = (config = None, n_scenes = None, seed = None))]
fn simulate(
    py: Python<'_>,
    config: Option<&Bound<'_, PyAny>>,
    n_scenes: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let mut cfg = match config {
        Some(obj) => {
            let mut doc = serde_json::to_value(SimulationConfig::default()).map_err(err)?;
            if let (Value::Object(base), Value::Object(over)) = (&mut doc, from_py(py, obj)?) {
                base.extend(over);
            } else {
                return Err(PyValueError::new_err("config must be a JSON object"));
            }
            serde_json::from_value::<SimulationConfig>(doc).map_err(err)?
        }
        None => SimulationConfig::default(),
    };
    if let Some(n) = n_scenes {
        cfg.n_scenes = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = py.detach(|| simulate_core(&cfg)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule(name = "bmploop")]
pub fn bmploop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRleMask>()?;
    m.add_class::<PyAnnotationSet>()?;
    m.add_class::<PyPredictionSet>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(bbox_iou, m)?)?;
    m.add_function(wrap_pyfunction!(make_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("COCO_SIGMAS", bmploop::COCO_SIGMAS.to_vec())?;
    m.add("COCO_KEYPOINT_NAMES", bmploop::COCO_KEYPOINT_NAMES.to_vec())?;
    Ok(())
}
