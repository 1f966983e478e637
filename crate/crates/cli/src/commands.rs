use std::io::Write;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use bmploop::coco_io::{parse_annotation_set, parse_prediction_set, serialize_annotation_set, AnnotationSet};
use bmploop::dataset_tools::{apply_legacy_filter, compute_stats, export_histogram, merge_annotations, MergePolicy};
use bmploop::evaluator::{
    evaluate, write_matching_log, write_summary_csv, write_summary_json, EvalOptions, SimilarityKind,
};
use bmploop::geometry::IouModePolicy;
use bmploop::model_stages::{
    serve_connection, serve_tcp, AdapterConfig, OracleServer, RemoteStage, StageError, StageKind,
};
use bmploop::simulate::{simulate, SimulationConfig};
use bmploop::synthetic_world::generate_scenes;
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::manifest::{RunDir, RunManifest};
use crate::{overrides, Cli, CliError, Command, IouGeometry, Kind, Task};

/// Share of scenes allowed to fail before a simulation exits with status 3.
const MAX_FAILED_SCENE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    task: SimilarityKind,
    max_dets: Option<usize>,
    category_ids: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryConfig {
    iou_mode: IouModePolicy,
}

/// Serializes `base`, applies the dotted overrides and reads it back, so a
/// misspelled key fails instead of being ignored.
fn resolve<T: Serialize + DeserializeOwned>(base: T, set: &[String]) -> Result<(T, Value), CliError> {
    let mut doc = serde_json::to_value(&base).expect("config serializes");
    overrides::apply(&mut doc, set).map_err(CliError::Input)?;
    let typed: T = serde_json::from_value(doc).map_err(|e| CliError::Input(format!("config: {e}")))?;
    let canonical = serde_json::to_value(&typed).expect("config serializes");
    Ok((typed, canonical))
}

fn task_kind(t: Task) -> SimilarityKind {
    match t {
        Task::Bbox => SimilarityKind::BboxIoU,
        Task::Segm => SimilarityKind::MaskIoU,
        Task::Keypoints => SimilarityKind::Oks,
    }
}

fn geometry(g: IouGeometry) -> IouModePolicy {
    match g {
        IouGeometry::Bbox => IouModePolicy::Bbox,
        IouGeometry::PreferMask => IouModePolicy::PreferMask,
    }
}

fn stage_kind(k: Kind) -> StageKind {
    match k {
        Kind::Detector => StageKind::Detector,
        Kind::Pose => StageKind::Pose,
        Kind::Refiner => StageKind::Refiner,
        Kind::Lifter => StageKind::Lifter,
    }
}

fn read_gt(manifest: &mut RunManifest, path: &Path) -> Result<AnnotationSet, CliError> {
    let bytes = manifest.read_input(path)?;
    parse_annotation_set(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn buffer<F>(f: F) -> Vec<u8>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), Box<dyn std::error::Error>>,
{
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn print_done(dir: &Path) {
    println!("run directory: {}", dir.display());
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let seed = g.seed.unwrap_or(0);
    match &cli.command {
        Command::Eval { gt, pred, task, max_dets } => {
            let base = EvalConfig { task: task_kind(*task), max_dets: *max_dets, category_ids: None };
            let (cfg, doc) = resolve(base, &g.set)?;
            let mut manifest = RunManifest::new("eval", doc, seed);
            let gts = read_gt(&mut manifest, gt)?;
            let pbytes = manifest.read_input(pred)?;
            let preds =
                parse_prediction_set(&pbytes).map_err(|e| CliError::Input(format!("{}: {e}", pred.display())))?;
            let opts = EvalOptions {
                category_ids: cfg.category_ids.clone(),
                max_dets: cfg.max_dets,
                ..EvalOptions::default()
            };
            let report = evaluate(&preds, &gts, cfg.task, &opts).map_err(|e| CliError::Input(e.to_string()))?;
            let unknown = {
                let mut p = preds.clone();
                p.resolve(&gts);
                p.predictions.iter().filter(|x| x.unknown_image).count()
            };
            if unknown > 0 {
                warn!(
                    "{unknown} predictions reference images absent from the ground truth; counted as false positives"
                );
            }

            let mut dir = RunDir::create(&g.out_dir, manifest)?;
            dir.write("report.json", &buffer(|b| Ok(write_summary_json(&report, b)?)))?;
            dir.write("summary.csv", &buffer(|b| Ok(write_summary_csv(&[&report], b)?)))?;
            dir.write("matching_log.csv", &buffer(|b| Ok(write_matching_log(&report, b)?)))?;
            let path = dir.finish()?;

            println!("{:<10} {:>6} {:>6} {:>6} {:>6}", "task", "ap", "ap50", "ap75", "ar");
            println!(
                "{:<10} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                report.task.task_name(),
                report.ap,
                report.ap50,
                report.ap75,
                report.ar
            );
            for a in &report.by_area {
                println!("  area {:<7} ap {:>6.3}  ar {:>6.3}", a.area, a.ap, a.ar);
            }
            println!("images {}  gts {}  predictions {}", report.n_images, report.n_gts, report.n_preds);
            print_done(&path);
            if !report.defined {
                return Err(CliError::Undefined("no ground-truth instance in scope; AP is undefined".into()));
            }
            Ok(())
        }

        Command::Stats { gt, iou_mode } => {
            let (cfg, doc) = resolve(GeometryConfig { iou_mode: geometry(*iou_mode) }, &g.set)?;
            let mut manifest = RunManifest::new("stats", doc, seed);
            let set = read_gt(&mut manifest, gt)?;
            let stats = compute_stats(&set, cfg.iou_mode).map_err(|e| CliError::Undefined(e.to_string()))?;
            let mut dir = RunDir::create(&g.out_dir, manifest)?;
            dir.write("stats.json", &serde_json::to_vec_pretty(&stats).expect("stats"))?;
            dir.write("histogram.csv", &buffer(|b| Ok(export_histogram(&stats, b)?)))?;
            let path = dir.finish()?;
            println!("images               {}", stats.n_images);
            println!("instances            {}", stats.n_instances);
            println!("keypoint instances   {}", stats.n_keypoint_instances);
            println!("mask instances       {}", stats.n_mask_instances);
            println!("mean IoUMax          {:.4} ({:?})", stats.mean_ioumax, stats.iou_mode);
            for (mode, mean) in &stats.mean_ioumax_by_mode {
                println!("  {mode:<5} mean        {mean:.4}");
            }
            print_done(&path);
            Ok(())
        }

        Command::Filter { gt, iou_mode, out } => {
            let (cfg, doc) = resolve(GeometryConfig { iou_mode: geometry(*iou_mode) }, &g.set)?;
            let mut manifest = RunManifest::new("filter", doc, seed);
            let set = read_gt(&mut manifest, gt)?;
            let filtered = apply_legacy_filter(&set, cfg.iou_mode);
            let bytes = serialize_annotation_set(&filtered);
            let mut dir = RunDir::create(&g.out_dir, manifest)?;
            dir.write("filtered.json", &bytes)?;
            if let Some(o) = out {
                dir.export(o, &bytes)?;
            }
            let path = dir.finish()?;
            println!(
                "kept {} of {} instances ({} removed)",
                filtered.instances.len(),
                set.instances.len(),
                set.instances.len() - filtered.instances.len()
            );
            print_done(&path);
            Ok(())
        }

        Command::Merge { base, additions, out } => {
            let (policy, doc) = resolve(MergePolicy::default(), &g.set)?;
            let mut manifest = RunManifest::new("merge", doc, seed);
            let b = read_gt(&mut manifest, base)?;
            let a = read_gt(&mut manifest, additions)?;
            let (merged, report) = merge_annotations(&b, &a, &policy).map_err(|e| CliError::Input(e.to_string()))?;
            let bytes = serialize_annotation_set(&merged);
            let mut dir = RunDir::create(&g.out_dir, manifest)?;
            dir.write("merged.json", &bytes)?;
            dir.write("merge_report.json", &serde_json::to_vec_pretty(&report).expect("report"))?;
            if let Some(o) = out {
                dir.export(o, &bytes)?;
            }
            let path = dir.finish()?;
            let kp = merged.instances.iter().filter(|i| i.num_keypoints > 0).count();
            println!(
                "added {} of {} additions ({} duplicates); {} keypoint instances in total",
                report.n_added,
                report.n_additions,
                report.duplicates.len(),
                kp
            );
            print_done(&path);
            Ok(())
        }

        Command::ExportHistogram { gt, iou_mode, out } => {
            let (cfg, doc) = resolve(GeometryConfig { iou_mode: geometry(*iou_mode) }, &g.set)?;
            let mut manifest = RunManifest::new("export-histogram", doc, seed);
            let set = read_gt(&mut manifest, gt)?;
            let stats = compute_stats(&set, cfg.iou_mode).map_err(|e| CliError::Undefined(e.to_string()))?;
            let bytes = buffer(|b| Ok(export_histogram(&stats, b)?));
            let mut dir = RunDir::create(&g.out_dir, manifest)?;
            dir.write("histogram.csv", &bytes)?;
            if let Some(o) = out {
                dir.export(o, &bytes)?;
            }
            let path = dir.finish()?;
            std::io::stdout().write_all(&bytes).map_err(|e| CliError::Output(e.to_string()))?;
            print_done(&path);
            Ok(())
        }

        Command::Simulate { config, n_scenes } => {
            let (cfg, doc) = simulation_config(cli, config.as_deref(), *n_scenes)?;
            let manifest = RunManifest::new("simulate", doc, cfg.seed);
            let mut manifest = manifest;
            if let Some(p) = config {
                manifest.read_input(p)?;
            }
            info!("simulating {} scenes", cfg.n_scenes);
            let report = simulate(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
            let mut dir = RunDir::create(&g.out_dir, manifest)?;
            dir.write("config.json", &serde_json::to_vec_pretty(&cfg).expect("config"))?;
            dir.write("report.json", &serde_json::to_vec_pretty(&report).expect("report"))?;
            dir.write("results.csv", &buffer(|b| Ok(report.write_csv(b)?)))?;
            let path = dir.finish()?;

            println!(
                "{:<20} {:<14} {:>7} {:>7} {:>7} {:>8}",
                "experiment", "variant", "kp_ap", "mask_ap", "preds", "failed"
            );
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
            for r in &report.rows {
                let exp = serde_json::to_value(r.experiment).expect("enum");
                println!(
                    "{:<20} {:<14} {:>7} {:>7} {:>7} {:>8}",
                    exp.as_str().unwrap_or_default(),
                    r.variant,
                    fmt(r.keypoint_ap),
                    fmt(r.mask_ap),
                    r.n_predictions,
                    r.n_failed_scenes
                );
            }
            println!("scenes {}  digest {}", report.n_scenes, report.digest);
            print_done(&path);
            let frac = report.failed_scene_fraction();
            if frac > MAX_FAILED_SCENE_FRACTION {
                return Err(CliError::StageFailure(format!(
                    "{:.0}% of scenes had failed stage calls (limit {:.0}%)",
                    frac * 100.0,
                    MAX_FAILED_SCENE_FRACTION * 100.0
                )));
            }
            Ok(())
        }

        Command::ServeCheck { endpoint, kind, timeout_ms } => {
            let ep = endpoint.parse().map_err(CliError::Input)?;
            let mut cfg = AdapterConfig::new(ep, stage_kind(*kind));
            cfg.timeout = Duration::from_millis(*timeout_ms);
            match RemoteStage::connect(cfg) {
                Ok(_) => {
                    println!("ok: {endpoint} accepted the handshake as {}", stage_kind(*kind).name());
                    Ok(())
                }
                Err(e @ StageError::VersionMismatch { .. }) => Err(CliError::StageFailure(format!("{endpoint}: {e}"))),
                Err(e) => Err(CliError::StageFailure(format!("{endpoint}: {e} ({})", e.code()))),
            }
        }

        Command::Serve { kind, listen, stdio, config, n_scenes } => {
            let (cfg, _) = simulation_config(cli, config.as_deref(), *n_scenes)?;
            let (world, profile) = cfg.seeded();
            let scenes = generate_scenes(&world, cfg.n_scenes).map_err(|e| CliError::Input(e.to_string()))?;
            let server = OracleServer::new(stage_kind(*kind), &profile, scenes);
            if *stdio {
                let stdin = std::io::stdin();
                let stdout = std::io::stdout();
                serve_connection(&server, &mut stdin.lock(), &mut stdout.lock())
                    .map_err(|e| CliError::Output(e.to_string()))
            } else {
                let addr = listen.as_deref().unwrap_or("127.0.0.1:0");
                let listener = TcpListener::bind(addr).map_err(|e| CliError::Input(format!("{addr}: {e}")))?;
                let local = listener.local_addr().map_err(|e| CliError::Output(e.to_string()))?;
                eprintln!("listening on tcp://{local} as {}", stage_kind(*kind).name());
                serve_tcp(listener, Arc::new(server)).map_err(|e| CliError::Output(e.to_string()))
            }
        }
    }
}

/// Config file, then `--seed` / `--n-scenes`, then `--set` overrides.
fn simulation_config(
    cli: &Cli,
    path: Option<&Path>,
    n_scenes: Option<usize>,
) -> Result<(SimulationConfig, Value), CliError> {
    let mut cfg = match path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => SimulationConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(n) = n_scenes {
        cfg.n_scenes = n;
    }
    let (cfg, doc) = resolve(cfg, &cli.global.set)?;
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok((cfg, doc))
}
