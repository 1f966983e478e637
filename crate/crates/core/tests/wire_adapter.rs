use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use bmploop::geometry::BBox;
use bmploop::loop_engine::{run_3d_handoff, run_loop, PoseKeypoint, PosePrediction, StageConfig};
use bmploop::model_stages::wire::{
    bbox_to_wire, codes, decode_message, read_frame, to_payload, write_frame, write_raw_frame, Message, PoseRequest,
    SceneRef, Status, WireMask, PROTOCOL_VERSION,
};
use bmploop::model_stages::{
    serve_tcp, AdapterConfig, CorruptionProfile, Endpoint, OracleServer, PoseEstimator, RemoteStage, StageError,
    StageKind, StageSet,
};
use bmploop::synthetic_world::{generate_scenes, Scene, WorldConfig};

fn spawn(server: OracleServer) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server = Arc::new(server);
    std::thread::spawn(move || serve_tcp(listener, server));
    addr
}

fn remote(addr: &str, kind: StageKind) -> Arc<RemoteStage> {
    let mut cfg = AdapterConfig::new(Endpoint::Tcp(addr.to_string()), kind);
    cfg.timeout = Duration::from_secs(10);
    Arc::new(RemoteStage::connect(cfg).unwrap())
}

fn remote_stages(profile: &CorruptionProfile, scenes: &[Scene]) -> StageSet {
    let addr = |kind| spawn(OracleServer::new(kind, profile, scenes.iter().cloned()));
    StageSet {
        detector: remote(&addr(StageKind::Detector), StageKind::Detector),
        pose: remote(&addr(StageKind::Pose), StageKind::Pose),
        refiner: remote(&addr(StageKind::Refiner), StageKind::Refiner),
        lifter: Some(remote(&addr(StageKind::Lifter), StageKind::Lifter)),
    }
}

fn scenes(n: usize) -> Vec<Scene> {
    generate_scenes(&WorldConfig::preset("och_like").unwrap(), n).unwrap()
}

#[test]
fn adapter_matches_in_process_oracles() {
    let scenes = scenes(12);
    let profile = CorruptionProfile::standard();
    let local = StageSet::oracle(&profile);
    let wire = remote_stages(&profile, &scenes);
    let cfg = StageConfig::plus();
    for s in &scenes {
        let a = run_loop(s, &local, &cfg).unwrap();
        let b = run_loop(s, &wire, &cfg).unwrap();
        assert_eq!(a.trace_digest(), b.trace_digest(), "scene {}", s.id);
        assert_eq!(a.digest(), b.digest(), "scene {}", s.id);
        for use_mask in [true, false] {
            let ha = run_3d_handoff(s, &a, local.lifter.as_deref(), &cfg, use_mask);
            let hb = run_3d_handoff(s, &b, wire.lifter.as_deref(), &cfg, use_mask);
            assert_eq!(ha, hb);
        }
    }
}

struct BadPose;

impl PoseEstimator for BadPose {
    fn estimate_pose(
        &self,
        _: &Scene,
        _: &BBox,
        _: Option<&bmploop::coco_io::RleMask>,
        _: f64,
    ) -> Result<PosePrediction, StageError> {
        let k = PoseKeypoint { x: 1.0, y: 1.0, presence: 1.5, visibility: 1.0, expected_oks: 1.0, confidence: 1.0 };
        Ok(PosePrediction { keypoints: vec![k; 17] })
    }
}

#[test]
fn out_of_range_output_fails_the_instance() {
    let scenes = scenes(3);
    let profile = CorruptionProfile::perfect();
    let mut bad = StageSet::oracle(&profile);
    bad.pose = Arc::new(BadPose);
    let addr = spawn(OracleServer::with_stages(StageKind::Pose, bad, scenes.clone()));
    let mut stages = StageSet::oracle(&profile);
    stages.pose = remote(&addr, StageKind::Pose);
    let r = run_loop(&scenes[0], &stages, &StageConfig::default()).unwrap();
    assert!(r.instances.is_empty());
    assert!(!r.failed.is_empty());
    assert!(r.failed.iter().all(|f| f.stage == StageKind::Pose && f.code == codes::INVALID_PAYLOAD));
}

#[test]
fn server_down_flags_every_instance() {
    let scenes = scenes(2);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let mut stages = StageSet::oracle(&CorruptionProfile::perfect());
    let mut cfg = AdapterConfig::new(Endpoint::Tcp(addr), StageKind::Refiner);
    cfg.timeout = Duration::from_millis(500);
    stages.refiner = Arc::new(RemoteStage::new(cfg));
    let r = run_loop(&scenes[0], &stages, &StageConfig::default()).unwrap();
    assert!(r.instances.is_empty());
    // nothing is blacked out, so every detector pass fails the same people again
    let passes = StageConfig::default().max_detector_passes;
    assert_eq!(r.failed.len(), scenes[0].people.len() * passes);
    assert!(r.failed.iter().all(|f| f.stage == StageKind::Refiner));
    assert!(r.failed.iter().all(|f| f.code == "unavailable"));
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let _ = read_frame(&mut s);
        write_frame(&mut s, &Message::Ack { version: PROTOCOL_VERSION, stage_kind: StageKind::Pose }).unwrap();
        let _ = read_frame(&mut s);
        std::thread::sleep(Duration::from_secs(3));
    });
    let mut cfg = AdapterConfig::new(Endpoint::Tcp(addr), StageKind::Pose);
    cfg.timeout = Duration::from_millis(300);
    let stage = RemoteStage::connect(cfg).unwrap();
    let s = &scenes(1)[0];
    let err = stage.estimate_pose(s, &s.people[0].bbox, None, 0.25).unwrap_err();
    assert_eq!(err, StageError::Timeout(300));
}

fn handshake(addr: &str, version: u32, kind: StageKind) -> (TcpStream, Message) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write_frame(&mut s, &Message::Hello { version, stage_kind: kind }).unwrap();
    let reply = decode_message(&read_frame(&mut s).unwrap().unwrap()).unwrap();
    (s, reply)
}

fn expect_error(s: &mut TcpStream, code: &str) {
    match decode_message(&read_frame(s).unwrap().unwrap()).unwrap() {
        Message::Response { status: Status::Error, error_code, .. } => assert_eq!(error_code.as_deref(), Some(code)),
        other => panic!("expected an error response, got {other:?}"),
    }
}

#[test]
fn handshake_and_malformed_payloads() {
    let scenes = scenes(1);
    let scene = &scenes[0];
    let addr = spawn(OracleServer::new(StageKind::Pose, &CorruptionProfile::perfect(), scenes.clone()));

    let (_, ack) = handshake(&addr, PROTOCOL_VERSION, StageKind::Pose);
    assert_eq!(ack, Message::Ack { version: PROTOCOL_VERSION, stage_kind: StageKind::Pose });

    let (mut old, nack) = handshake(&addr, PROTOCOL_VERSION + 1, StageKind::Pose);
    assert!(matches!(nack, Message::Nack { .. }));
    let mut rest = Vec::new();
    assert_eq!(old.read_to_end(&mut rest).unwrap(), 0, "connection closed after NACK");

    let mut cfg = AdapterConfig::new(Endpoint::Tcp(addr.clone()), StageKind::Detector);
    cfg.timeout = Duration::from_secs(5);
    assert!(matches!(RemoteStage::connect(cfg), Err(StageError::Unavailable(_))));

    let (mut s, _) = handshake(&addr, PROTOCOL_VERSION, StageKind::Pose);
    write_raw_frame(&mut s, b"{not json").unwrap();
    expect_error(&mut s, codes::MALFORMED);

    let request = |payload| Message::Request { correlation_id: 5, stage_kind: StageKind::Pose, payload };
    let good = PoseRequest {
        scene: SceneRef::from(scene),
        bbox: bbox_to_wire(&scene.people[0].bbox),
        mask: None,
        alpha: 0.25,
    };

    write_frame(&mut s, &request(serde_json::json!({"scene": good.scene}))).unwrap();
    expect_error(&mut s, codes::INVALID_PAYLOAD);

    let mut bad_rle = good.clone();
    bad_rle.mask = Some(WireMask { size: [scene.height, scene.width], counts: "52".into() });
    write_frame(&mut s, &request(to_payload(&bad_rle))).unwrap();
    expect_error(&mut s, codes::RLE_RUN_SUM);

    let mut unknown = good.clone();
    unknown.scene.digest = "0".repeat(64);
    write_frame(&mut s, &request(to_payload(&unknown))).unwrap();
    expect_error(&mut s, codes::UNKNOWN_SCENE);

    let mut bad_alpha = good.clone();
    bad_alpha.alpha = 2.0;
    write_frame(&mut s, &request(to_payload(&bad_alpha))).unwrap();
    expect_error(&mut s, codes::PRECONDITION);

    write_frame(
        &mut s,
        &Message::Request { correlation_id: 6, stage_kind: StageKind::Refiner, payload: to_payload(&good) },
    )
    .unwrap();
    expect_error(&mut s, codes::WRONG_STAGE_KIND);

    // the connection survives all of the above
    write_frame(&mut s, &request(to_payload(&good))).unwrap();
    match decode_message(&read_frame(&mut s).unwrap().unwrap()).unwrap() {
        Message::Response { correlation_id: 5, status: Status::Ok, .. } => {}
        other => panic!("{other:?}"),
    }
    s.flush().unwrap();
}
