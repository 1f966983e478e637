use std::io::{self, BufReader};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::server::raster_digest;
use super::wire::{
    bbox_to_wire, decode_message, parse_payload, read_frame, to_payload, write_frame, DetectRequest, DetectResponse,
    LiftRequest, LiftResponse, Message, PoseRequest, PoseResponse, RefineRequest, RefineResponse, SceneRef, Status,
    WireError, WireMask, PROTOCOL_VERSION,
};
use super::{
    Detection, Detector, Lift3d, Lifter3d, MaskRefiner, PoseEstimator, Prompt, StageError, StageKind, StageSet,
};
use crate::coco_io::RleMask;
use crate::geometry::{BBox, BlackoutRaster};
use crate::loop_engine::PosePrediction;
use crate::synthetic_world::Scene;
use crate::NUM_KEYPOINTS;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where an external stage lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port` of a stream socket.
    Tcp(String),
    /// A child process speaking the protocol on stdin/stdout.
    Command { program: String, args: Vec<String> },
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    /// `tcp://host:port` or `cmd:program arg ...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or("empty command endpoint")?;
            return Ok(Endpoint::Command { program, args: parts.collect() });
        }
        Err(format!("endpoint `{s}` must start with tcp:// or cmd:"))
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Command { program, args } => write!(f, "cmd:{} {}", program, args.join(" ")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdapterConfig {
    pub endpoint: Endpoint,
    pub kind: StageKind,
    /// Per-call limit, handshake included.
    pub timeout: Duration,
    /// Idle connections kept for reuse.
    pub pool_size: usize,
}

impl AdapterConfig {
    pub fn new(endpoint: Endpoint, kind: StageKind) -> Self {
        Self { endpoint, kind, timeout: DEFAULT_TIMEOUT, pool_size: 8 }
    }
}

/// Optional external endpoints, one per stage kind; unset kinds stay in-process.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageEndpoints {
    pub detector: Option<String>,
    pub pose: Option<String>,
    pub refiner: Option<String>,
    pub lifter: Option<String>,
    /// Per-call timeout in milliseconds.
    pub timeout_ms: Option<u64>,
}

impl StageEndpoints {
    pub fn is_empty(&self) -> bool {
        self.detector.is_none() && self.pose.is_none() && self.refiner.is_none() && self.lifter.is_none()
    }

    fn adapter(&self, kind: StageKind, text: &str) -> Result<Arc<RemoteStage>, String> {
        let mut cfg = AdapterConfig::new(text.parse()?, kind);
        if let Some(ms) = self.timeout_ms {
            cfg.timeout = Duration::from_millis(ms);
        }
        Ok(Arc::new(RemoteStage::new(cfg)))
    }

    /// Replaces the stages that have an endpoint with lazily connecting adapters.
    pub fn apply(&self, mut stages: StageSet) -> Result<StageSet, String> {
        if let Some(e) = &self.detector {
            stages.detector = self.adapter(StageKind::Detector, e)?;
        }
        if let Some(e) = &self.pose {
            stages.pose = self.adapter(StageKind::Pose, e)?;
        }
        if let Some(e) = &self.refiner {
            stages.refiner = self.adapter(StageKind::Refiner, e)?;
        }
        if let Some(e) = &self.lifter {
            stages.lifter = Some(self.adapter(StageKind::Lifter, e)?);
        }
        Ok(stages)
    }
}

trait Transport: Send {
    fn send(&mut self, msg: &Message) -> io::Result<()>;
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, StageError>;
}

fn timeout_ms(t: Duration) -> u64 {
    t.as_millis() as u64
}

struct TcpTransport {
    stream: TcpStream,
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &Message) -> io::Result<()> {
        write_frame(&mut self.stream, msg)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, StageError> {
        self.stream.set_read_timeout(Some(timeout)).map_err(|e| StageError::Unavailable(e.to_string()))?;
        match read_frame(&mut self.stream) {
            Ok(Some(body)) => Ok(body),
            Ok(None) => Err(StageError::Unavailable("connection closed by the stage".into())),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Err(StageError::Timeout(timeout_ms(timeout)))
            }
            Err(e) => Err(StageError::Unavailable(e.to_string())),
        }
    }
}

struct ChildTransport {
    child: Child,
    stdin: ChildStdin,
    frames: Receiver<io::Result<Option<Vec<u8>>>>,
}

impl ChildTransport {
    fn spawn(program: &str, args: &[String]) -> io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, frames) = mpsc::channel();
        std::thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            loop {
                let f = read_frame(&mut r);
                let done = !matches!(f, Ok(Some(_)));
                if tx.send(f).is_err() || done {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, frames })
    }
}

impl Transport for ChildTransport {
    fn send(&mut self, msg: &Message) -> io::Result<()> {
        write_frame(&mut self.stdin, msg)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, StageError> {
        match self.frames.recv_timeout(timeout) {
            Ok(Ok(Some(body))) => Ok(body),
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                Err(StageError::Unavailable("stage process closed its output".into()))
            }
            Ok(Err(e)) => Err(StageError::Unavailable(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(StageError::Timeout(timeout_ms(timeout))),
        }
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Connection {
    transport: Box<dyn Transport>,
}

fn validation(e: WireError) -> StageError {
    StageError::Validation { code: e.code.to_string(), message: e.message }
}

impl Connection {
    fn open(cfg: &AdapterConfig) -> Result<Self, StageError> {
        let unavailable = |e: io::Error| StageError::Unavailable(format!("{}: {e}", cfg.endpoint));
        let transport: Box<dyn Transport> = match &cfg.endpoint {
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(unavailable)?
                    .next()
                    .ok_or_else(|| StageError::Unavailable(format!("{addr} resolves to no address")))?;
                let stream = TcpStream::connect_timeout(&sock, cfg.timeout).map_err(unavailable)?;
                stream.set_nodelay(true).map_err(unavailable)?;
                Box::new(TcpTransport { stream })
            }
            Endpoint::Command { program, args } => Box::new(ChildTransport::spawn(program, args).map_err(unavailable)?),
        };
        let mut conn = Self { transport };
        conn.transport
            .send(&Message::Hello { version: PROTOCOL_VERSION, stage_kind: cfg.kind })
            .map_err(unavailable)?;
        let reply =
            decode_message(&conn.transport.recv(cfg.timeout)?).map_err(|e| StageError::Protocol(e.to_string()))?;
        match reply {
            Message::Ack { version, stage_kind } if version == PROTOCOL_VERSION && stage_kind == cfg.kind => Ok(conn),
            Message::Ack { version, .. } | Message::Nack { version, .. } if version != PROTOCOL_VERSION => {
                Err(StageError::VersionMismatch { local: PROTOCOL_VERSION, remote: version })
            }
            Message::Nack { reason, .. } => Err(StageError::Unavailable(format!("handshake refused: {reason}"))),
            other => Err(StageError::Protocol(format!("unexpected handshake reply {other:?}"))),
        }
    }
}

/// Proxies one stage kind to an external process. Each call is one
/// request/response on a pooled connection; a connection serves one call at a time.
pub struct RemoteStage {
    cfg: AdapterConfig,
    idle: Mutex<Vec<Connection>>,
    next_id: AtomicU64,
}

impl RemoteStage {
    /// Connects lazily; an unreachable endpoint surfaces as an error on each call.
    pub fn new(cfg: AdapterConfig) -> Self {
        Self { cfg, idle: Mutex::new(Vec::new()), next_id: AtomicU64::new(1) }
    }

    /// Connects and handshakes once up front.
    pub fn connect(cfg: AdapterConfig) -> Result<Self, StageError> {
        let conn = Connection::open(&cfg)?;
        let stage = Self::new(cfg);
        stage.idle.lock().expect("pool lock").push(conn);
        Ok(stage)
    }

    pub fn kind(&self) -> StageKind {
        self.cfg.kind
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.cfg
    }

    fn expect_kind(&self, kind: StageKind) -> Result<(), StageError> {
        if self.cfg.kind == kind {
            Ok(())
        } else {
            Err(StageError::WrongKind(kind.name()))
        }
    }

    /// Sends one request payload and returns the response payload.
    pub fn call(&self, payload: Value) -> Result<Value, StageError> {
        let pooled = self.idle.lock().expect("pool lock").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::open(&self.cfg)?,
        };
        let correlation_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        conn.transport
            .send(&Message::Request { correlation_id, stage_kind: self.cfg.kind, payload })
            .map_err(|e| StageError::Unavailable(e.to_string()))?;
        // a failed read leaves the stream mid-frame, so the connection is dropped
        let body = conn.transport.recv(self.cfg.timeout)?;
        let reply = decode_message(&body).map_err(|e| StageError::Protocol(e.to_string()))?;
        let Message::Response { correlation_id: got, status, error_code, message, payload } = reply else {
            return Err(StageError::Protocol("expected RESPONSE".into()));
        };
        if got != correlation_id {
            return Err(StageError::Protocol(format!("response {got} answers request {correlation_id}")));
        }
        {
            let mut idle = self.idle.lock().expect("pool lock");
            if idle.len() < self.cfg.pool_size {
                idle.push(conn);
            }
        }
        match status {
            Status::Ok => Ok(payload),
            Status::Error => Err(StageError::Remote {
                code: error_code.unwrap_or_else(|| "unspecified".into()),
                message: message.unwrap_or_default(),
            }),
        }
    }

    fn call_typed<T: serde::de::DeserializeOwned>(&self, payload: Value) -> Result<T, StageError> {
        parse_payload(self.call(payload)?).map_err(validation)
    }
}

fn check_pose(p: PosePrediction) -> Result<PosePrediction, StageError> {
    if p.keypoints.len() != NUM_KEYPOINTS {
        return Err(StageError::Validation {
            code: super::wire::codes::INVALID_PAYLOAD.into(),
            message: format!("expected {NUM_KEYPOINTS} keypoints, got {}", p.keypoints.len()),
        });
    }
    if !p.is_valid() {
        return Err(StageError::Validation {
            code: super::wire::codes::INVALID_PAYLOAD.into(),
            message: "pose scalars must lie in [0, 1] with finite locations".into(),
        });
    }
    Ok(p)
}

impl Detector for RemoteStage {
    fn detect(&self, scene: &Scene, raster: &BlackoutRaster) -> Result<Vec<Detection>, StageError> {
        self.expect_kind(StageKind::Detector)?;
        let mask = WireMask::from(raster.as_rle());
        let req = DetectRequest { scene: SceneRef::from(scene), raster_digest: raster_digest(&mask), raster: mask };
        let resp: DetectResponse = self.call_typed(to_payload(&req))?;
        resp.into_detections((scene.height, scene.width)).map_err(validation)
    }
}

impl PoseEstimator for RemoteStage {
    fn estimate_pose(
        &self,
        scene: &Scene,
        bbox: &BBox,
        mask: Option<&RleMask>,
        alpha: f64,
    ) -> Result<PosePrediction, StageError> {
        self.expect_kind(StageKind::Pose)?;
        let req =
            PoseRequest { scene: SceneRef::from(scene), bbox: bbox_to_wire(bbox), mask: mask.map(Into::into), alpha };
        let resp: PoseResponse = self.call_typed(to_payload(&req))?;
        check_pose(PosePrediction { keypoints: resp.keypoints })
    }
}

impl MaskRefiner for RemoteStage {
    fn refine_mask(&self, scene: &Scene, prompts: &[Prompt], prior: Option<&RleMask>) -> Result<RleMask, StageError> {
        self.expect_kind(StageKind::Refiner)?;
        let req = RefineRequest {
            scene: SceneRef::from(scene),
            prompts: prompts.to_vec(),
            prior_mask: prior.map(Into::into),
        };
        let resp: RefineResponse = self.call_typed(to_payload(&req))?;
        resp.mask.decode((scene.height, scene.width)).map_err(validation)
    }
}

impl Lifter3d for RemoteStage {
    fn encode_scene(&self, scene: &Scene) -> Result<String, StageError> {
        self.expect_kind(StageKind::Lifter)?;
        let resp: LiftResponse = self.call_typed(to_payload(&LiftRequest::Encode { scene: SceneRef::from(scene) }))?;
        resp.features.ok_or_else(|| StageError::Validation {
            code: super::wire::codes::INVALID_PAYLOAD.into(),
            message: "encode response carries no features".into(),
        })
    }

    fn lift(
        &self,
        scene: &Scene,
        features: &str,
        bbox: Option<&BBox>,
        mask: Option<&RleMask>,
    ) -> Result<Lift3d, StageError> {
        self.expect_kind(StageKind::Lifter)?;
        let req = LiftRequest::Lift {
            scene: SceneRef::from(scene),
            features: features.to_string(),
            bbox: bbox.map(bbox_to_wire),
            mask: mask.map(Into::into),
        };
        let resp: LiftResponse = self.call_typed(to_payload(&req))?;
        let lift = resp.into_lift().map_err(validation)?;
        if lift.keypoints_3d.len() != NUM_KEYPOINTS {
            return Err(StageError::Validation {
                code: super::wire::codes::INVALID_PAYLOAD.into(),
                message: format!("expected {NUM_KEYPOINTS} 3D keypoints, got {}", lift.keypoints_3d.len()),
            });
        }
        Ok(lift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!("tcp://127.0.0.1:9".parse::<Endpoint>().unwrap(), Endpoint::Tcp("127.0.0.1:9".into()));
        assert_eq!(
            "cmd:python3 -m server".parse::<Endpoint>().unwrap(),
            Endpoint::Command { program: "python3".into(), args: vec!["-m".into(), "server".into()] }
        );
        assert!("udp://x".parse::<Endpoint>().is_err());
    }

    #[test]
    fn unreachable_endpoint_fails_per_call() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let mut cfg = AdapterConfig::new(Endpoint::Tcp(addr.to_string()), StageKind::Pose);
        cfg.timeout = Duration::from_millis(500);
        let stage = RemoteStage::new(cfg);
        assert!(matches!(stage.call(Value::Null), Err(StageError::Unavailable(_))));
        assert!(matches!(stage.call(Value::Null), Err(StageError::Unavailable(_))));
    }
}
