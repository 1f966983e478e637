//! Versioned wire protocol for out-of-process stages: every frame is a
//! 4-byte big-endian length followed by one JSON message. Masks travel as
//! COCO compressed-RLE strings; scenes travel by reference.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Detection, Lift3d, Prompt, StageKind};
use crate::coco_io::{rle_from_coco_string, rle_to_coco_string, RleError, RleMask};
use crate::geometry::BBox;
use crate::loop_engine::PoseKeypoint;
use crate::synthetic_world::Scene;

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: usize = 64 << 20;

/// Error codes carried in error responses and validation failures.
pub mod codes {
    pub const TIMEOUT: &str = "timeout";
    pub const VERSION_MISMATCH: &str = "version_mismatch";
    pub const MALFORMED: &str = "malformed_message";
    pub const INVALID_PAYLOAD: &str = "invalid_payload";
    pub const RLE_RUN_SUM: &str = "rle_run_sum";
    pub const UNKNOWN_SCENE: &str = "unknown_scene";
    pub const WRONG_STAGE_KIND: &str = "wrong_stage_kind";
    pub const PRECONDITION: &str = "precondition";
    pub const STAGE_ERROR: &str = "stage_error";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello {
        version: u32,
        stage_kind: StageKind,
    },
    Ack {
        version: u32,
        stage_kind: StageKind,
    },
    Nack {
        version: u32,
        reason: String,
    },
    Request {
        correlation_id: u64,
        stage_kind: StageKind,
        payload: Value,
    },
    Response {
        correlation_id: u64,
        status: Status,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error_code: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
        #[serde(default)]
        payload: Value,
    },
}

impl Message {
    pub fn ok(correlation_id: u64, payload: Value) -> Self {
        Message::Response { correlation_id, status: Status::Ok, error_code: None, message: None, payload }
    }

    pub fn error(correlation_id: u64, err: &WireError) -> Self {
        Message::Response {
            correlation_id,
            status: Status::Error,
            error_code: Some(err.code.to_string()),
            message: Some(err.message.clone()),
            payload: Value::Null,
        }
    }
}

/// A protocol-level failure with its error code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireError {
    pub code: &'static str,
    pub message: String,
}

impl WireError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl std::fmt::Display for WireError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_raw_frame(w, &body)
}

/// Writes arbitrary bytes as one frame (used to exercise malformed input).
pub fn write_raw_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    if body.len() > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame body; `None` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes exceeds limit")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn decode_message(body: &[u8]) -> Result<Message, WireError> {
    serde_json::from_slice(body).map_err(|e| WireError::new(codes::MALFORMED, e.to_string()))
}

/// A scene named by id and content digest. External real-image stages get a file path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRef {
    pub id: u64,
    pub digest: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl From<&Scene> for SceneRef {
    fn from(s: &Scene) -> Self {
        Self { id: s.id, digest: s.digest.clone(), width: s.width, height: s.height, file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMask {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: String,
}

impl From<&RleMask> for WireMask {
    fn from(m: &RleMask) -> Self {
        Self { size: [m.height, m.width], counts: rle_to_coco_string(m) }
    }
}

impl WireMask {
    /// Decodes and checks the size against the scene frame.
    pub fn decode(&self, frame: (u32, u32)) -> Result<RleMask, WireError> {
        if (self.size[0], self.size[1]) != frame {
            return Err(WireError::new(
                codes::INVALID_PAYLOAD,
                format!("mask size {:?} does not match the scene {:?}", self.size, [frame.0, frame.1]),
            ));
        }
        rle_from_coco_string(&self.counts, frame).map_err(|e| match e {
            RleError::RunSumMismatch { .. } => WireError::new(codes::RLE_RUN_SUM, e.to_string()),
            other => WireError::new(codes::INVALID_PAYLOAD, other.to_string()),
        })
    }
}

pub fn bbox_to_wire(b: &BBox) -> [f64; 4] {
    [b.x, b.y, b.w, b.h]
}

pub fn bbox_from_wire(b: [f64; 4]) -> Result<BBox, WireError> {
    if !b.iter().all(|v| v.is_finite()) || b[2] < 0.0 || b[3] < 0.0 {
        return Err(WireError::new(codes::INVALID_PAYLOAD, format!("invalid box {b:?}")));
    }
    Ok(BBox::new(b[0], b[1], b[2], b[3]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub scene: SceneRef,
    pub raster: WireMask,
    pub raster_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<WireMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub detections: Vec<WireDetection>,
}

impl DetectResponse {
    pub fn from_detections(dets: &[Detection]) -> Self {
        Self {
            detections: dets
                .iter()
                .map(|d| WireDetection {
                    bbox: bbox_to_wire(&d.bbox),
                    score: d.score,
                    mask: d.mask.as_ref().map(Into::into),
                })
                .collect(),
        }
    }

    /// Decodes and validates every detection against the scene frame.
    pub fn into_detections(self, frame: (u32, u32)) -> Result<Vec<Detection>, WireError> {
        self.detections
            .into_iter()
            .map(|d| {
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(WireError::new(codes::INVALID_PAYLOAD, format!("score {} outside [0, 1]", d.score)));
                }
                Ok(Detection {
                    bbox: bbox_from_wire(d.bbox)?,
                    score: d.score,
                    mask: d.mask.map(|m| m.decode(frame)).transpose()?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRequest {
    pub scene: SceneRef,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<WireMask>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseResponse {
    pub keypoints: Vec<PoseKeypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRequest {
    pub scene: SceneRef,
    pub prompts: Vec<Prompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mask: Option<WireMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResponse {
    pub mask: WireMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LiftRequest {
    Encode {
        scene: SceneRef,
    },
    Lift {
        scene: SceneRef,
        features: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bbox: Option<[f64; 4]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<WireMask>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LiftResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints_3d: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reprojection: Option<Vec<[f64; 2]>>,
}

impl LiftResponse {
    pub fn from_lift(l: &Lift3d) -> Self {
        Self { features: None, keypoints_3d: Some(l.keypoints_3d.clone()), reprojection: Some(l.reprojection.clone()) }
    }

    pub fn into_lift(self) -> Result<Lift3d, WireError> {
        match (self.keypoints_3d, self.reprojection) {
            (Some(k), Some(r)) if k.len() == r.len() => Ok(Lift3d { keypoints_3d: k, reprojection: r }),
            _ => Err(WireError::new(
                codes::INVALID_PAYLOAD,
                "lift response needs equally long keypoints_3d and reprojection",
            )),
        }
    }
}

/// Parses a payload document into its typed form.
pub fn parse_payload<T: serde::de::DeserializeOwned>(payload: Value) -> Result<T, WireError> {
    serde_json::from_value(payload).map_err(|e| WireError::new(codes::INVALID_PAYLOAD, e.to_string()))
}

pub fn to_payload<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable payload")
}
