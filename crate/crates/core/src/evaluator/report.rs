use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::EvalReport;

/// Column order of the summary CSV.
pub const SUMMARY_FIELDS: [&str; 9] = ["task", "ap", "ap50", "ap75", "ar", "n_images", "n_gts", "n_preds", "iou_mode"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub n_images: usize,
    pub n_gts: usize,
    pub n_preds: usize,
    pub iou_mode: String,
}

impl From<&EvalReport> for SummaryRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            task: r.task.task_name().to_string(),
            ap: r.ap,
            ap50: r.ap50,
            ap75: r.ap75,
            ar: r.ar,
            n_images: r.n_images,
            n_gts: r.n_gts,
            n_preds: r.n_preds,
            iou_mode: r.iou_mode().to_string(),
        }
    }
}

/// One row per report, header included.
pub fn write_summary_csv<W: Write>(reports: &[&EvalReport], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(SummaryRow::from(*r))?;
    }
    if reports.is_empty() {
        out.write_record(SUMMARY_FIELDS)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(r: R) -> csv::Result<Vec<SummaryRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Machine-readable summary: the CSV fields plus `defined`, per-area values
/// and the precision/recall arrays.
pub fn write_summary_json<W: Write>(report: &EvalReport, w: W) -> serde_json::Result<()> {
    let row = SummaryRow::from(report);
    let doc = json!({
        "task": row.task,
        "ap": row.ap,
        "ap50": row.ap50,
        "ap75": row.ap75,
        "ar": row.ar,
        "n_images": row.n_images,
        "n_gts": row.n_gts,
        "n_preds": row.n_preds,
        "iou_mode": row.iou_mode,
        "defined": report.defined,
        "by_area": report.by_area,
        "thresholds": report.thresholds,
        "precision": report.precision,
        "recall": report.recall,
    });
    serde_json::to_writer_pretty(w, &doc)
}

/// Matching log as CSV: image_id, prediction_id, score, threshold, outcome, gt_id, similarity.
pub fn write_matching_log<W: Write>(report: &EvalReport, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["image_id", "prediction_id", "score", "threshold", "outcome", "gt_id", "similarity"])?;
    for m in &report.matching_log {
        out.write_record([
            m.image_id.to_string(),
            m.prediction_id.to_string(),
            m.score.to_string(),
            format!("{:.2}", m.threshold),
            m.outcome.clone(),
            m.gt_id.map(|g| g.to_string()).unwrap_or_default(),
            m.similarity.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
