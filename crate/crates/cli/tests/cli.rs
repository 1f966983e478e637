use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bmploop::coco_io::{
    parse_annotation_set, serialize_annotation_set, serialize_prediction_set, AnnotationSet, PredictedKeypoint,
    Prediction, PredictionSet,
};
use bmploop::synthetic_world::{make_dataset, DropRule, WorldConfig};
use serde_json::Value;
use tempfile::TempDir;

fn bmploop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmploop"))
        .args(args)
        .env("BMPLOOP_OUT_DIR", dir.join("runs"))
        .env_remove("BMPLOOP_SET")
        .env_remove("BMPLOOP_SEED")
        .env_remove("BMPLOOP_THREADS")
        .env_remove("BMPLOOP_CONFIG")
        .output()
        .expect("spawn bmploop")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_dir(o: &Output) -> PathBuf {
    let text = stdout(o);
    let line = text.lines().find_map(|l| l.strip_prefix("run directory: ")).expect("run directory line");
    PathBuf::from(line)
}

fn dataset() -> AnnotationSet {
    make_dataset(&WorldConfig::default(), 6, DropRule::None).unwrap().complete
}

fn gt_as_predictions(set: &AnnotationSet) -> PredictionSet {
    PredictionSet::new(
        set.instances
            .iter()
            .filter(|i| !i.iscrowd)
            .map(|i| {
                let mut p = Prediction::new(i.image_id, 1.0).with_bbox(i.bbox);
                if let Some(m) = &i.mask {
                    p = p.with_mask(m.clone());
                }
                if !i.keypoints.is_empty() {
                    p = p.with_keypoints(
                        i.keypoints.iter().map(|k| PredictedKeypoint { x: k.x, y: k.y, score: 1.0 }).collect(),
                    );
                }
                p
            })
            .collect(),
    )
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> String {
    let p = dir.join(name);
    fs::write(&p, bytes).unwrap();
    p.display().to_string()
}

#[test]
fn ground_truth_fed_back_scores_one() {
    let tmp = TempDir::new().unwrap();
    let gt = dataset();
    let g = write(tmp.path(), "gt.json", &serialize_annotation_set(&gt));
    let p = write(tmp.path(), "pred.json", &serialize_prediction_set(&gt_as_predictions(&gt)));
    for task in ["bbox", "segm", "keypoints"] {
        let o = bmploop(tmp.path(), &["eval", "--gt", &g, "--pred", &p, "--task", task]);
        assert!(o.status.success(), "{task}: {}", String::from_utf8_lossy(&o.stderr));
        let dir = run_dir(&o);
        let report: Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
        let ap = report["ap"].as_f64().unwrap();
        assert!((ap - 1.0).abs() < 1e-12, "{task} ap {ap}");
        for f in ["summary.csv", "matching_log.csv", "manifest.json"] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        assert!(stdout(&o).contains("1.000"));
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let mut gt = dataset();
    let p = write(tmp.path(), "pred.json", &serialize_prediction_set(&gt_as_predictions(&gt)));

    // keypoint task without sigmas or keypoint names
    let mut bare = gt.clone();
    for c in &mut bare.categories {
        c.keypoints.clear();
        c.sigmas = None;
    }
    for i in &mut bare.instances {
        i.keypoints.clear();
        i.num_keypoints = 0;
    }
    let b = write(tmp.path(), "bare.json", &serialize_annotation_set(&bare));
    assert_eq!(bmploop(tmp.path(), &["eval", "--gt", &b, "--pred", &p]).status.code(), Some(1));

    let broken = write(tmp.path(), "broken.json", b"{\"images\": [");
    assert_eq!(bmploop(tmp.path(), &["eval", "--gt", &broken, "--pred", &p]).status.code(), Some(1));
    assert_eq!(bmploop(tmp.path(), &["stats", "--gt", &broken]).status.code(), Some(1));
    let missing = tmp.path().join("absent.json").display().to_string();
    assert_eq!(bmploop(tmp.path(), &["stats", "--gt", &missing]).status.code(), Some(1));

    gt.instances.clear();
    let empty = write(tmp.path(), "empty.json", &serialize_annotation_set(&gt));
    let o = bmploop(tmp.path(), &["eval", "--gt", &empty, "--pred", &p, "--task", "bbox"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn filtered_set_has_no_low_overlap_instances() {
    let tmp = TempDir::new().unwrap();
    let g = write(tmp.path(), "gt.json", &serialize_annotation_set(&dataset()));
    let out = tmp.path().join("filtered.json");
    let o = bmploop(tmp.path(), &["filter", "--gt", &g, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&out).unwrap(), fs::read(run_dir(&o).join("filtered.json")).unwrap());
    parse_annotation_set(&fs::read(&out).unwrap()).unwrap();

    let o = bmploop(tmp.path(), &["stats", "--gt", out.to_str().unwrap()]);
    assert!(o.status.success());
    let stats: Value = serde_json::from_slice(&fs::read(run_dir(&o).join("stats.json")).unwrap()).unwrap();
    let hist: Vec<f64> = stats["ioumax_histogram"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(hist.len(), 20);
    // bin 0 also holds the isolated instances at exactly 0
    assert!(hist[1..10].iter().all(|&v| v == 0.0), "{hist:?}");

    let csv = tmp.path().join("h.csv");
    let o = bmploop(tmp.path(), &["export-histogram", "--gt", &g, "--out", csv.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(fs::read_to_string(csv).unwrap().lines().count() > 1);
}

#[test]
fn equal_manifests_give_equal_outputs_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let gt = dataset();
    let g = write(tmp.path(), "gt.json", &serialize_annotation_set(&gt));
    let p = write(tmp.path(), "pred.json", &serialize_prediction_set(&gt_as_predictions(&gt)));
    let mut dirs = Vec::new();
    for threads in ["1", "2"] {
        let out = tmp.path().join(format!("t{threads}"));
        let o = Command::new(env!("CARGO_BIN_EXE_bmploop"))
            .args([
                "--threads",
                threads,
                "--out-dir",
                out.to_str().unwrap(),
                "eval",
                "--gt",
                &g,
                "--pred",
                &p,
                "--task",
                "segm",
            ])
            .output()
            .unwrap();
        assert!(o.status.success());
        dirs.push(run_dir(&o));
    }
    assert_eq!(dirs[0].file_name(), dirs[1].file_name());
    for f in ["report.json", "summary.csv", "matching_log.csv", "manifest.json"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn overrides_from_flags_and_environment() {
    let tmp = TempDir::new().unwrap();
    let gt = dataset();
    let g = write(tmp.path(), "gt.json", &serialize_annotation_set(&gt));
    let p = write(tmp.path(), "pred.json", &serialize_prediction_set(&gt_as_predictions(&gt)));

    let o = bmploop(tmp.path(), &["--set", "max_dets=3", "eval", "--gt", &g, "--pred", &p]);
    assert!(o.status.success());
    let manifest: Value = serde_json::from_slice(&fs::read(run_dir(&o).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["max_dets"], 3);
    assert_eq!(manifest["config"]["task"], "keypoints");

    let o = bmploop(tmp.path(), &["--set", "max_detz=3", "eval", "--gt", &g, "--pred", &p]);
    assert_eq!(o.status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_bmploop"))
        .args(["eval", "--gt", &g, "--pred", &p])
        .env("BMPLOOP_OUT_DIR", tmp.path().join("env"))
        .env("BMPLOOP_SET", "task=\"bbox\";max_dets=5")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value = serde_json::from_slice(&fs::read(run_dir(&o).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["max_dets"], 5);
    assert_eq!(manifest["config"]["task"], "bbox");
}

#[test]
fn unreachable_stage_endpoint_fails_the_simulation() {
    let tmp = TempDir::new().unwrap();
    let o = bmploop(
        tmp.path(),
        &[
            "--seed",
            "3",
            "--set",
            "endpoints.refiner=\"tcp://127.0.0.1:9\"",
            "--set",
            "endpoints.timeout_ms=200",
            "--set",
            "experiments=[\"loop_variants\"]",
            "simulate",
            "--n-scenes",
            "2",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let dir = run_dir(&o);
    assert!(dir.join("results.csv").is_file());
    let manifest: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);

    let o = bmploop(
        tmp.path(),
        &["serve-check", "--endpoint", "tcp://127.0.0.1:9", "--kind", "pose", "--timeout-ms", "200"],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn serve_check_against_the_stdio_server() {
    let tmp = TempDir::new().unwrap();
    let endpoint = format!("cmd:{} serve --kind refiner --stdio --n-scenes 2", env!("CARGO_BIN_EXE_bmploop"));
    let o = bmploop(tmp.path(), &["serve-check", "--endpoint", &endpoint, "--kind", "refiner"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("ok:"));

    let o = bmploop(tmp.path(), &["serve-check", "--endpoint", &endpoint, "--kind", "pose"]);
    assert_eq!(o.status.code(), Some(3));
}
