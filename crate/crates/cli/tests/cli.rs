use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use tignn_cli::config::{preset, PIPELINE_SCHEMA};
use tignn_cli::manifest::{hex_sha256, RunManifest};
use tignn_core::checkpoint::Checkpoint;
use tignn_core::fem::load_dataset;
use tignn_core::graph::Normalization;
use tignn_core::io::{from_json, read_text, to_json, write_atomic};
use tignn_core::render::{mvp, ndc_to_pixel, project, Camera, ModelPose};
use tignn_core::tignn::{ModelConfig, TignnModel};
use tignn_core::train::{TrainConfig, ERROR_CSV_HEADER};
use tignn_session::wire::PokeEvent;
use tignn_session::{Message, Script};

fn tignn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tignn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = tignn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sha(path: &Path) -> String {
    hex_sha256(&std::fs::read(path).unwrap())
}

fn manifest(dir: &Path, command: &str) -> RunManifest {
    from_json(&read_text(dir.join(format!("{command}.manifest.json"))).unwrap()).unwrap()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a stored golden value; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

fn toy_dataset(dir: &Path) -> PathBuf {
    ok(&["datagen", "--preset", "toy-overfit", "--out", s(dir)]);
    dir.join("dataset.json")
}

/// Untrained checkpoint with silent heads: every rollout stays at rest.
fn zero_checkpoint(path: &Path) {
    let mut model = TignnModel::new(ModelConfig { hidden: 8, k: 1 }, 0).unwrap();
    model.zero_heads();
    let cfg = TrainConfig {
        hidden: 8,
        k: 1,
        ..TrainConfig::default()
    };
    Checkpoint::new(&model, &Normalization::identity(), &cfg).unwrap().save(path).unwrap();
}

fn random_checkpoint(path: &Path, seed: u64) {
    let model = TignnModel::new(ModelConfig { hidden: 8, k: 2 }, seed).unwrap();
    let mut stats = Normalization::identity();
    stats.target.std = vec![1e-3; stats.target.std.len()];
    let cfg = TrainConfig {
        hidden: 8,
        k: 2,
        seed,
        ..TrainConfig::default()
    };
    Checkpoint::new(&model, &stats, &cfg).unwrap().save(path).unwrap();
}

#[test]
fn datagen_is_deterministic_and_reproducible_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let ds = toy_dataset(&a);
    toy_dataset(&b);
    assert_eq!(sha(&ds), sha(&b.join("dataset.json")));
    let m = manifest(&a, "datagen");
    assert_eq!(m.command, "datagen");
    assert_eq!(m.config["schema"], PIPELINE_SCHEMA);
    assert_eq!(m.outputs[0].sha256, sha(&ds));
    assert!(m.completed);
    // the manifest alone is enough to repeat the run
    ok(&["datagen", "--config", s(&a.join("datagen.manifest.json")), "--out", s(&c)]);
    assert_eq!(sha(&c.join("dataset.json")), sha(&ds));
    // a different seed samples different load positions
    let d = tmp.path().join("d");
    ok(&["datagen", "--preset", "toy-overfit", "--seed", "9", "--out", s(&d)]);
    assert_ne!(sha(&d.join("dataset.json")), sha(&ds));
}

#[test]
fn desk_preset_generates_thirty_full_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["datagen", "--preset", "beam-desk", "--out", s(tmp.path())]);
    let ds = load_dataset(tmp.path().join("dataset.json")).unwrap();
    assert_eq!(ds.mesh.n_nodes(), 81);
    assert_eq!(ds.cases.len(), 30);
    assert!(ds.cases.iter().all(|c| c.snapshots.len() == 21));
    assert_eq!((ds.train.len(), ds.test.len()), (24, 6));
}

#[test]
fn zero_cases_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = preset("toy-overfit").unwrap();
    cfg.data.load_positions = 0;
    let path = tmp.path().join("zero.json");
    write_atomic(&path, to_json(&cfg, "config").unwrap()).unwrap();
    let out = tignn(&["datagen", "--config", s(&path), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid argument"));
}

#[test]
fn unknown_preset_and_bad_schema_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tignn(&["datagen", "--preset", "teapot", "--out", s(tmp.path())]).status.code(), Some(2));
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, r#"{"schema": "pipeline/0"}"#).unwrap();
    assert_eq!(tignn(&["datagen", "--config", s(&path)]).status.code(), Some(2));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tignn(&["train", "--dataset", s(&tmp.path().join("nope.json")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

fn last_data_loss(csv: &Path) -> f64 {
    let text = read_text(csv).unwrap();
    let last = text.lines().last().unwrap();
    last.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn toy_preset_overfits_and_training_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = toy_dataset(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--preset", "toy-overfit", "--dataset", s(&ds), "--out", s(&a)]);
    ok(&["train", "--preset", "toy-overfit", "--dataset", s(&ds), "--out", s(&b)]);
    let loss = last_data_loss(&a.join("loss.csv"));
    assert!(loss < 1e-3, "final data loss {loss}");
    assert_eq!(sha(&a.join("checkpoint.json")), sha(&b.join("checkpoint.json")));
    let m = manifest(&a, "train");
    assert_eq!(m.inputs[0].sha256, sha(&ds));
    assert_eq!(m.outputs.len(), 2);
    let ckpt = Checkpoint::load(a.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.train_config, preset("toy-overfit").unwrap().train);
}

#[test]
fn truth_against_itself_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = toy_dataset(tmp.path());
    ok(&["eval", "--preset", "toy-overfit", "--dataset", s(&ds), "--truth", "--out", s(tmp.path())]);
    let csv = read_text(tmp.path().join("errors.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), ERROR_CSV_HEADER);
    check_golden("errors_truth.csv", &csv);
}

#[test]
fn diverging_checkpoint_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = toy_dataset(tmp.path());
    let ckpt_path = tmp.path().join("wild.json");
    let model = TignnModel::new(ModelConfig { hidden: 8, k: 1 }, 3).unwrap();
    let mut stats = Normalization::identity();
    stats.target.std = vec![f64::MAX; stats.target.std.len()];
    Checkpoint::new(&model, &stats, &TrainConfig::default()).unwrap().save(&ckpt_path).unwrap();
    let out = tignn(&["eval", "--preset", "toy-overfit", "--dataset", s(&ds), "--checkpoint", s(&ckpt_path), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn rest_render_matches_golden_and_stays_static_without_load() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("zero.json");
    zero_checkpoint(&ckpt);
    ok(&["render", "--preset", "beam-desk", "--checkpoint", s(&ckpt), "--out", s(tmp.path())]);
    let frames = tmp.path().join("frames");
    let first = std::fs::read(frames.join("frame_0000.ppm")).unwrap();
    assert!(first.starts_with(b"P6\n320 320\n255\n"));
    for t in 1..=20 {
        assert_eq!(std::fs::read(frames.join(format!("frame_{t:04}.ppm"))).unwrap(), first);
    }
    check_golden("rest_frame.sha256", &hex_sha256(&first));
    assert_eq!(manifest(tmp.path(), "render").outputs.len(), 21);
}

#[test]
fn tip_vertex_lands_on_the_hand_computed_pixel() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("zero.json");
    zero_checkpoint(&ckpt);
    // camera 100 above the free end looking straight down, image y along +y
    let mut cfg = preset("beam-desk").unwrap();
    cfg.render.camera = Camera::look_at([5.0, 5.0, 140.0], [5.0, 5.0, 40.0], [0.0, 1.0, 0.0], 0.8, 1.0, 500.0).unwrap();
    cfg.render.frames = Some(0);
    cfg.render.point_radius = 0;
    cfg.render.wireframe = false;
    let path = tmp.path().join("top.json");
    write_atomic(&path, to_json(&cfg, "config").unwrap()).unwrap();
    ok(&["render", "--config", s(&path), "--checkpoint", s(&ckpt), "--out", s(tmp.path())]);

    // corner (10, 10, 40) sits 5 right, 5 up and 100 in front of the eye
    let ndc = 5.0 / 100.0 / (0.4f64).tan();
    let hand = [(1.0 + ndc) * 160.0, (1.0 - ndc) * 160.0];
    let p = project(&mvp(&cfg.render.camera, &ModelPose::default()), [10.0, 10.0, 40.0]).unwrap();
    let px = ndc_to_pixel([p.ndc[0], p.ndc[1]], 320, 320);
    assert!((px[0] - hand[0]).abs() < 1e-9 && (px[1] - hand[1]).abs() < 1e-9);

    let img = std::fs::read(tmp.path().join("frames/frame_0000.ppm")).unwrap();
    let header = b"P6\n320 320\n255\n".len();
    let rgb = |x: usize, y: usize| &img[header + 3 * (y * 320 + x)..header + 3 * (y * 320 + x) + 3];
    let (x, y) = (hand[0].floor() as usize, hand[1].floor() as usize);
    assert_ne!(rgb(x, y), [255, 255, 255], "tip vertex missing at ({x}, {y})");
    // the top face spans NDC [-ndc, ndc]; just outside it is background
    assert_eq!(rgb(x + 3, y), [255, 255, 255]);
    assert_eq!(rgb(x, y - 3), [255, 255, 255]);
}

fn replay_script() -> Script {
    let mut script = Script::new(300);
    let json = |m: Message| serde_json::to_value(m).unwrap();
    script.push(2, json(Message::Poke(PokeEvent::new([0.0, 0.0], 0))));
    script.push(60, json(Message::Poke(PokeEvent::new([0.02, 0.2], 2))));
    script.push(120, serde_json::Value::String("{\"type\": 1".into()));
    script.push(
        150,
        serde_json::json!({"schema": "wire/1", "type": "camera", "extrinsics": {
            "rotation": [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            "translation": [100.0, 5.0, 20.0]}}),
    );
    script.push(151, json(Message::Poke(PokeEvent::new([0.0, 0.1], 0))));
    script.push(200, serde_json::json!({"schema": "wire/1", "type": "reset"}));
    script.push(210, json(Message::Poke(PokeEvent::new([0.05, -0.05], 0))));
    script
}

#[test]
fn replay_reproduces_the_golden_frame_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("model.json");
    random_checkpoint(&ckpt, 11);
    let script = tmp.path().join("script.json");
    replay_script().save(&script).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["serve", "--preset", "beam-desk", "--checkpoint", s(&ckpt), "--replay", s(&script), "--out", s(dir)]);
    }
    let stream = read_text(a.join("frames.jsonl")).unwrap();
    assert_eq!(stream, read_text(b.join("frames.jsonl")).unwrap());
    let frames = stream.lines().filter(|l| l.contains("\"type\":\"frame\"")).count();
    assert_eq!(frames, 301);
    assert_eq!(stream.lines().filter(|l| l.contains("parse_error")).count(), 1);
    check_golden("replay_frames.sha256", &hex_sha256(stream.as_bytes()));
    let m = manifest(&a, "serve");
    assert_eq!(m.config["schema"], "scene/1");
    assert_eq!(m.outputs[0].sha256, hex_sha256(stream.as_bytes()));
}

#[test]
fn serve_reports_a_port_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("zero.json");
    zero_checkpoint(&ckpt);
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let out = tignn(&["serve", "--preset", "beam-desk", "--checkpoint", s(&ckpt), "--port", &port]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("127.0.0.1:{port}")));
}

#[test]
fn serve_without_checkpoint_is_a_config_error() {
    assert_eq!(tignn(&["serve", "--preset", "beam-desk", "--port", "0"]).status.code(), Some(2));
}

#[test]
fn interrupt_shuts_down_cleanly_and_flushes_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("zero.json");
    zero_checkpoint(&ckpt);
    let record = tmp.path().join("session.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_tignn"))
        .args(["serve", "--preset", "two-beam-scene", "--checkpoint", s(&ckpt), "--port", "0"])
        .args(["--record", s(&record), "--out", s(tmp.path())])
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    thread::sleep(Duration::from_millis(500));
    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let deadline = Instant::now() + Duration::from_secs(10);
    let exit = loop {
        if let Some(st) = child.try_wait().unwrap() {
            break st;
        }
        assert!(Instant::now() < deadline, "server ignored SIGINT");
        thread::sleep(Duration::from_millis(20));
    };
    assert!(exit.success());
    let m = manifest(tmp.path(), "serve");
    assert_eq!(m.outputs[0].path, record);
    let script = Script::load(&record).unwrap();
    assert!(script.ticks > 0 && script.events.is_empty());
}
