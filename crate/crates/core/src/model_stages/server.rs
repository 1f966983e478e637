use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;

use serde_json::Value;

use super::wire::{
    codes, decode_message, parse_payload, read_frame, to_payload, write_frame, DetectRequest, DetectResponse,
    LiftRequest, LiftResponse, Message, PoseRequest, PoseResponse, RefineRequest, RefineResponse, SceneRef, WireError,
    WireMask, PROTOCOL_VERSION,
};
use super::{CorruptionProfile, StageError, StageKind, StageSet};
use crate::digest::sha256_hex;
use crate::geometry::BlackoutRaster;
use crate::synthetic_world::Scene;

/// Scenes a server can resolve from a `SceneRef`.
#[derive(Debug, Clone, Default)]
pub struct SceneRegistry {
    scenes: HashMap<u64, Arc<Scene>>,
}

impl SceneRegistry {
    pub fn new(scenes: impl IntoIterator<Item = Scene>) -> Self {
        Self { scenes: scenes.into_iter().map(|s| (s.id, Arc::new(s))).collect() }
    }

    pub fn get(&self, r: &SceneRef) -> Result<&Scene, WireError> {
        match self.scenes.get(&r.id) {
            Some(s) if s.digest == r.digest && s.width == r.width && s.height == r.height => Ok(s),
            Some(_) => {
                Err(WireError::new(codes::UNKNOWN_SCENE, format!("scene {} has a different digest or size", r.id)))
            }
            None => Err(WireError::new(codes::UNKNOWN_SCENE, format!("scene {} is not registered", r.id))),
        }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Serves one stage kind backed by in-process stages (oracles by default).
#[derive(Clone)]
pub struct OracleServer {
    kind: StageKind,
    stages: StageSet,
    scenes: SceneRegistry,
}

/// Raster digest sent with detector requests.
pub(crate) fn raster_digest(m: &WireMask) -> String {
    sha256_hex(m.counts.as_bytes())
}

fn stage_err(e: StageError) -> WireError {
    match e {
        StageError::Precondition(m) => WireError::new(codes::PRECONDITION, m),
        other => WireError::new(codes::STAGE_ERROR, other.to_string()),
    }
}

impl OracleServer {
    pub fn new(kind: StageKind, profile: &CorruptionProfile, scenes: impl IntoIterator<Item = Scene>) -> Self {
        Self::with_stages(kind, StageSet::oracle(profile), scenes)
    }

    pub fn with_stages(kind: StageKind, stages: StageSet, scenes: impl IntoIterator<Item = Scene>) -> Self {
        Self { kind, stages, scenes: SceneRegistry::new(scenes) }
    }

    pub fn kind(&self) -> StageKind {
        self.kind
    }

    /// Answers one request payload.
    pub fn handle(&self, kind: StageKind, payload: Value) -> Result<Value, WireError> {
        if kind != self.kind {
            return Err(WireError::new(
                codes::WRONG_STAGE_KIND,
                format!("this server runs the {} stage, not {}", self.kind.name(), kind.name()),
            ));
        }
        match kind {
            StageKind::Detector => {
                let req: DetectRequest = parse_payload(payload)?;
                let scene = self.scenes.get(&req.scene)?;
                if raster_digest(&req.raster) != req.raster_digest {
                    return Err(WireError::new(codes::INVALID_PAYLOAD, "raster digest does not match the raster"));
                }
                let raster = BlackoutRaster::from_mask(req.raster.decode((scene.height, scene.width))?);
                let dets = self.stages.detector.detect(scene, &raster).map_err(stage_err)?;
                Ok(to_payload(&DetectResponse::from_detections(&dets)))
            }
            StageKind::Pose => {
                let req: PoseRequest = parse_payload(payload)?;
                let scene = self.scenes.get(&req.scene)?;
                let bbox = super::wire::bbox_from_wire(req.bbox)?;
                let mask = req.mask.map(|m| m.decode((scene.height, scene.width))).transpose()?;
                let pose = self.stages.pose.estimate_pose(scene, &bbox, mask.as_ref(), req.alpha).map_err(stage_err)?;
                Ok(to_payload(&PoseResponse { keypoints: pose.keypoints }))
            }
            StageKind::Refiner => {
                let req: RefineRequest = parse_payload(payload)?;
                let scene = self.scenes.get(&req.scene)?;
                let prior = req.prior_mask.map(|m| m.decode((scene.height, scene.width))).transpose()?;
                let mask = self.stages.refiner.refine_mask(scene, &req.prompts, prior.as_ref()).map_err(stage_err)?;
                Ok(to_payload(&RefineResponse { mask: WireMask::from(&mask) }))
            }
            StageKind::Lifter => {
                let lifter = self
                    .stages
                    .lifter
                    .as_ref()
                    .ok_or_else(|| WireError::new(codes::STAGE_ERROR, "no lifter configured"))?;
                match parse_payload::<LiftRequest>(payload)? {
                    LiftRequest::Encode { scene } => {
                        let scene = self.scenes.get(&scene)?;
                        let features = lifter.encode_scene(scene).map_err(stage_err)?;
                        Ok(to_payload(&LiftResponse { features: Some(features), ..Default::default() }))
                    }
                    LiftRequest::Lift { scene, features, bbox, mask } => {
                        let scene = self.scenes.get(&scene)?;
                        let bbox = bbox.map(super::wire::bbox_from_wire).transpose()?;
                        let mask = mask.map(|m| m.decode((scene.height, scene.width))).transpose()?;
                        let out = lifter.lift(scene, &features, bbox.as_ref(), mask.as_ref()).map_err(stage_err)?;
                        Ok(to_payload(&LiftResponse::from_lift(&out)))
                    }
                }
            }
        }
    }
}

/// Runs the protocol on one connection until the peer hangs up. A version or
/// stage-kind mismatch in the handshake is answered with NACK and ends the
/// connection; malformed requests get an error response and the connection stays open.
pub fn serve_connection<R: Read, W: Write>(server: &OracleServer, reader: &mut R, writer: &mut W) -> io::Result<()> {
    let Some(first) = read_frame(reader)? else {
        return Ok(());
    };
    match decode_message(&first) {
        Ok(Message::Hello { version, stage_kind }) => {
            if version != PROTOCOL_VERSION {
                let reason = format!("server speaks protocol {PROTOCOL_VERSION}, client sent {version}");
                return write_frame(writer, &Message::Nack { version: PROTOCOL_VERSION, reason });
            }
            if stage_kind != server.kind {
                let reason = format!("server runs the {} stage", server.kind.name());
                return write_frame(writer, &Message::Nack { version: PROTOCOL_VERSION, reason });
            }
            write_frame(writer, &Message::Ack { version: PROTOCOL_VERSION, stage_kind })?;
        }
        _ => {
            let reason = "expected HELLO".to_string();
            return write_frame(writer, &Message::Nack { version: PROTOCOL_VERSION, reason });
        }
    }
    while let Some(body) = read_frame(reader)? {
        let reply = match decode_message(&body) {
            Ok(Message::Request { correlation_id, stage_kind, payload }) => match server.handle(stage_kind, payload) {
                Ok(p) => Message::ok(correlation_id, p),
                Err(e) => Message::error(correlation_id, &e),
            },
            Ok(_) => Message::error(0, &WireError::new(codes::MALFORMED, "expected REQUEST")),
            Err(e) => Message::error(0, &e),
        };
        write_frame(writer, &reply)?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(listener: TcpListener, server: Arc<OracleServer>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let server = Arc::clone(&server);
        std::thread::spawn(move || {
            let mut reader = match stream.try_clone() {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("stage server: {e}");
                    return;
                }
            };
            let mut writer = stream;
            if let Err(e) = serve_connection(&server, &mut reader, &mut writer) {
                log::debug!("stage server connection ended: {e}");
            }
        });
    }
    Ok(())
}
