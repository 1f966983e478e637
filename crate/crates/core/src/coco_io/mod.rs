//! COCO annotation/result documents and the run-length mask codec.

mod annotation;
mod polygon;
mod results;
mod rle;

use thiserror::Error;

pub(crate) use annotation::keypoint_extent;
pub use annotation::{
    parse_annotation_set, serialize_annotation_set, AnnotationSet, Category, ImageInfo, Instance, Keypoint,
};
pub use polygon::{rasterize_polygon, rasterize_polygons};
pub use results::{parse_prediction_set, serialize_prediction_set, PredictedKeypoint, Prediction, PredictionSet};
pub use rle::{rle_decode, rle_encode, rle_from_coco_string, rle_to_coco_string, RleError, RleMask};

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse { offset: usize, line: usize, column: usize, message: String },
    #[error("instances reference missing images: {instance_ids:?}")]
    DanglingImage { instance_ids: Vec<u64> },
    #[error("instances reference missing categories: {instance_ids:?}")]
    DanglingCategory { instance_ids: Vec<u64> },
    #[error("duplicate instance id {0}")]
    DuplicateId(u64),
    #[error("result {index} has no score")]
    MissingScore { index: usize },
    #[error("result {index} has score {score} outside [0, 1]")]
    ScoreRange { index: usize, score: f64 },
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error(transparent)]
    Rle(#[from] RleError),
}

/// Parses JSON, translating serde's line/column position into a byte offset.
pub(crate) fn parse_json(bytes: &[u8]) -> Result<serde_json::Value, CocoError> {
    serde_json::from_slice(bytes).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        let offset = byte_offset(bytes, line, column);
        CocoError::Parse { offset, line, column, message: e.to_string() }
    })
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes.split_inclusive(|&b| b == b'\n').take(line - 1).map(|l| l.len()).sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}
