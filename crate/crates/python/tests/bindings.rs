use std::ffi::CString;

use bmploop_py::bmploop_module;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "bmploop").unwrap();
        bmploop_module(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("bmploop", m).unwrap();
        let src = CString::new(code).unwrap();
        if let Err(e) = py.run(&src, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn rle_round_trip_and_iou() {
    run(r#"
rows = [[(x + y) % 3 == 0 for x in range(7)] for y in range(5)]
m = bmploop.RleMask.encode(rows)
assert m.decode() == rows
s = m.to_string()
assert bmploop.RleMask.from_string(s, 5, 7) == m
assert m.area() == sum(map(sum, rows))
assert m.iou(m) == 1.0
b = bmploop.RleMask.from_bbox([1, 1, 2, 2], 5, 7)
assert b.area() == 4 and b.bbox() == [1.0, 1.0, 2.0, 2.0]
assert abs(bmploop.bbox_iou([0, 0, 2, 2], [1, 0, 2, 2]) - 1 / 3) < 1e-12
try:
    bmploop.RleMask(2, 2, [5])
    raise AssertionError("accepted a bad run sum")
except ValueError:
    pass
"#);
}

#[test]
fn dataset_tools_and_evaluation() {
    run(r#"
gt = bmploop.make_dataset(5, seed=2)
assert len(gt) > 0 and gt.n_images == 5
again = bmploop.AnnotationSet.from_json(gt.to_json())
assert again.to_json() == gt.to_json()
v = gt.ioumax()
kept = gt.legacy_filter()
assert len(kept) == sum(1 for x in v if x == 0 or x > 0.5)
stats = kept.stats()
assert all(h == 0 for h in stats["ioumax_histogram"][1:10])
merged, report = gt.merge(gt)
assert report["n_added"] == 0 and len(merged) == len(gt)

import json
doc = json.loads(gt.to_json())
preds = [{"image_id": a["image_id"], "category_id": 1, "bbox": a["bbox"], "score": 1.0}
         for a in doc["annotations"] if not a.get("iscrowd")]
p = bmploop.PredictionSet.from_json(json.dumps(preds))
r = bmploop.evaluate(gt, p, task="bbox")
assert abs(r["ap"] - 1.0) < 1e-12, r
try:
    bmploop.evaluate(gt, p, task="depth")
    raise AssertionError("accepted an unknown task")
except ValueError:
    pass
"#);
}
