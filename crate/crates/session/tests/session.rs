use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tignn_core::fem::MaterialParams;
use tignn_core::graph::Normalization;
use tignn_core::interaction::ContactConfig;
use tignn_core::mesh::build_beam_mesh;
use tignn_core::render::{axis_angle, Camera, ModelPose, PhongMaterial};
use tignn_core::tignn::{ModelConfig, TignnModel};
use tignn_session::scene::{default_contact, PokeSettings, ScalarField};
use tignn_session::server::{bind, serve_listener};
use tignn_session::wire::{codes, CameraEvent, PokeEvent, ResetEvent};
use tignn_session::{replay, Body, Message, Scene, SceneSettings, Script, ServeOptions};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::WebSocket;

fn beam(name: &str, pose: ModelPose, seed: u64, zero: bool) -> Body {
    let mesh = build_beam_mesh(10.0, 10.0, 40.0, 2, 2, 8, MaterialParams::beam()).unwrap();
    let mut model = TignnModel::new(ModelConfig { hidden: 8, k: 2 }, seed).unwrap();
    if zero {
        model.zero_heads();
    }
    let mut stats = Normalization::identity();
    // small rates so random weights give a bounded, visibly moving rollout
    stats.target.std = vec![1e-3; stats.target.std.len()];
    Body::new(name, mesh, model, stats, pose).unwrap()
}

fn settings(contact: Option<ContactConfig>) -> SceneSettings {
    SceneSettings {
        camera: Camera::look_at([5.0, -100.0, 20.0], [5.0, 5.0, 20.0], [0.0, 0.0, 1.0], 0.8, 1.0, 500.0).unwrap(),
        light: [0.3, 0.5, 1.0],
        material: PhongMaterial::default(),
        contact,
        tick_dt: 0.05,
        poke: PokeSettings::default(),
        scalar: ScalarField::SigmaXx,
        colormap_range: [-1.0, 1.0],
        realtime: false,
    }
}

/// Second beam turned 90 degrees to lie along x, 10 units beyond the first in y.
fn crossing_pose() -> ModelPose {
    ModelPose {
        translation: [-15.0, 20.0, 40.0],
        rotation: axis_angle([0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2),
        scale: [1.0; 3],
    }
}

fn one_body(seed: u64) -> Scene {
    Scene::new(vec![beam("a", ModelPose::default(), seed, false)], settings(None)).unwrap()
}

fn script() -> Script {
    let mut s = Script::new(300);
    let json = |m: Message| serde_json::to_value(m).unwrap();
    s.push(3, json(Message::Poke(PokeEvent::new([0.0, 0.0], 0))));
    s.push(3, serde_json::Value::String("{not json".into()));
    s.push(40, json(Message::Poke(PokeEvent::new([0.05, 0.3], 2))));
    let cam = Camera::look_at([-80.0, -60.0, 30.0], [5.0, 5.0, 20.0], [0.0, 0.0, 1.0], 0.8, 1.0, 500.0).unwrap();
    s.push(90, json(Message::Camera(CameraEvent::new(&cam))));
    s.push(91, json(Message::Poke(PokeEvent::new([0.0, 0.1], 0))));
    s.push(150, json(Message::Reset(ResetEvent::new())));
    s.push(151, json(Message::Poke(PokeEvent::new([0.1, -0.1], 0))));
    s.push(220, serde_json::json!({"type": "zap", "schema": "wire/1"}));
    s.push(221, json(Message::Poke(PokeEvent::new([-0.05, 0.2], 0))));
    s
}

fn record(seed: u64) -> Vec<String> {
    let mut scene = one_body(seed);
    let mut out = Vec::new();
    replay(&mut scene, &script(), &mut |line| out.push(line.to_string())).unwrap();
    out
}

#[test]
fn replayed_script_is_bit_identical() {
    let a = record(7);
    let b = record(7);
    assert_eq!(a.len(), 300 + 2 + 1);
    assert_eq!(a, b);
    // a different network gives a different stream, so the comparison is not vacuous
    assert_ne!(a, record(8));
}

#[test]
fn reset_reply_is_the_rest_frame() {
    let mut scene = one_body(1);
    let rest = scene.frame();
    scene.poke(&PokeEvent::new([0.0, 0.0], 0)).unwrap().unwrap();
    for _ in 0..5 {
        scene.tick();
    }
    assert_ne!(scene.frame().bodies, rest.bodies);
    let replies = scene.handle_message(&Message::Reset(ResetEvent::new()).to_json());
    match &replies[..] {
        [Message::Frame(f)] => assert_eq!(f.bodies, rest.bodies),
        other => panic!("unexpected replies {other:?}"),
    }
    assert!(scene.bodies[0].pokes.is_empty());
}

#[test]
fn picks_follow_camera_updates() {
    let mut scene = one_body(1);
    let (_, front) = scene.poke(&PokeEvent::new([0.0, 0.0], 0)).unwrap().unwrap();
    // same pointer position, camera now looking down the x axis
    let cam = Camera::look_at([100.0, 5.0, 20.0], [5.0, 5.0, 20.0], [0.0, 0.0, 1.0], 0.8, 1.0, 500.0).unwrap();
    assert!(scene.handle_message(&Message::Camera(CameraEvent::new(&cam)).to_json()).is_empty());
    let (_, side) = scene.poke(&PokeEvent::new([0.0, 0.0], 0)).unwrap().unwrap();
    let mesh = &scene.bodies[0].mesh;
    assert!(front.iter().all(|&i| mesh.rest_positions[i][1] == 0.0));
    assert!(side.iter().all(|&i| mesh.rest_positions[i][0] == 10.0));
    let force = scene.bodies[0].pokes[1].force;
    assert!(force[0] < 0.0 && force[1].abs() < 1e-9 * force[0].abs());
}

#[test]
fn divergence_reports_and_resets() {
    let mut body = beam("a", ModelPose::default(), 2, false);
    body.stats.target.std = vec![f64::MAX; 12];
    let mut scene = Scene::new(vec![body], settings(None)).unwrap();
    let rest = scene.frame();
    scene.poke(&PokeEvent::new([0.0, 0.0], 0)).unwrap();
    let out = (0..100).map(|_| scene.tick()).find(|o| o.error.is_some()).expect("overflowing rates must diverge");
    let err = out.error.unwrap();
    assert_eq!(err.code, codes::ROLLOUT_DIVERGENCE);
    assert_eq!(out.frame.bodies, rest.bodies);
    assert!(scene.bodies[0].pokes.is_empty());
}

#[test]
fn two_beam_contact_is_equal_and_opposite() {
    let a = beam("a", ModelPose::default(), 3, true);
    let b = beam("b", crossing_pose(), 4, true);
    let mut scene = Scene::new(vec![a, b], settings(None)).unwrap();
    scene.settings.contact = Some(default_contact(&scene.bodies, 1e5));
    // the gap of 10 keeps the assembly out of contact at rest
    scene.tick();
    assert!(scene.last_contact.iter().flatten().all(|f| *f == [0.0; 3]));
    // bend the first beam's free end to within the activation distance
    for n in &mut scene.bodies[0].state.nodes {
        let z = n.q[2];
        n.q[1] += 9.0 * (z / 40.0).powi(2);
    }
    scene.tick();
    let mut total = [0.0; 3];
    let mut active = 0;
    for f in scene.last_contact.iter().flatten() {
        for k in 0..3 {
            total[k] += f[k];
        }
        active += (*f != [0.0; 3]) as usize;
    }
    assert!(active > 0);
    assert_eq!(total, [0.0; 3]);
    // pushes the first beam back in -y
    let fy: f64 = scene.last_contact[0].iter().map(|f| f[1]).sum();
    assert!(fy < 0.0);
}

fn connect(port: u16) -> WebSocket<MaybeTlsStream<TcpStream>> {
    for _ in 0..200 {
        if let Ok((ws, _)) = tungstenite::connect(format!("ws://127.0.0.1:{port}")) {
            return ws;
        }
        thread::sleep(Duration::from_millis(10));
    }
    panic!("could not connect");
}

fn next_json(ws: &mut WebSocket<MaybeTlsStream<TcpStream>>) -> Message {
    loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

#[test]
fn server_greets_broadcasts_and_survives_garbage() {
    let mut scene = one_body(5);
    scene.settings.realtime = true;
    scene.settings.tick_dt = 0.02;
    let opts = ServeOptions {
        addr: "127.0.0.1:0".into(),
        max_ticks: None,
        record: None,
    };
    let (addr, listener) = bind(&opts).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    let server = thread::spawn(move || serve_listener(scene, listener, &opts, s).unwrap());

    let mut a = connect(addr.port());
    match next_json(&mut a) {
        Message::Hello(h) => {
            assert_eq!(h.bodies.len(), 1);
            assert_eq!(h.bodies[0].n_nodes, 81);
            assert_eq!(h.bodies[0].rest_positions.len(), 81);
        }
        other => panic!("expected hello, got {}", other.type_name()),
    }
    let mut b = connect(addr.port());
    assert!(matches!(next_json(&mut b), Message::Hello(_)));

    a.send(tungstenite::Message::text("{\"type\":")).unwrap();
    a.send(tungstenite::Message::text(Message::Poke(PokeEvent::new([0.0, 0.0], 0)).to_json()))
        .unwrap();
    let mut got_error = false;
    let mut frames_a = Vec::new();
    while frames_a.len() < 40 {
        match next_json(&mut a) {
            Message::Error(e) => {
                assert_eq!(e.code, codes::PARSE_ERROR);
                assert_eq!(e.offset, Some(8));
                got_error = true;
            }
            Message::Frame(f) => frames_a.push(f),
            other => panic!("unexpected {}", other.type_name()),
        }
    }
    assert!(got_error);
    // the poke moved the beam
    assert!(frames_a.last().unwrap().bodies[0].positions != frames_a[0].bodies[0].positions);

    // b sees the same frames over the ticks both were connected, and not the error
    let last = frames_a.last().unwrap().tick;
    let mut frames_b = Vec::new();
    loop {
        match next_json(&mut b) {
            Message::Frame(f) if f.tick >= last => {
                frames_b.push(f);
                break;
            }
            Message::Frame(f) => frames_b.push(f),
            other => panic!("unexpected {}", other.type_name()),
        }
    }
    let overlap: Vec<_> = frames_a.iter().filter(|f| f.tick >= frames_b[0].tick).collect();
    assert!(overlap.len() >= 30);
    assert_eq!(overlap, frames_b.iter().skip_while(|f| f.tick < overlap[0].tick).collect::<Vec<_>>());

    stop.store(true, Ordering::SeqCst);
    let summary = server.join().unwrap();
    assert_eq!(summary.connections, 2);
    assert_eq!(summary.messages, 2);
}

#[test]
fn bind_conflict_is_an_error() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let opts = ServeOptions {
        addr: held.local_addr().unwrap().to_string(),
        max_ticks: Some(1),
        record: None,
    };
    assert!(matches!(bind(&opts), Err(tignn_core::Error::Io { .. })));
}
