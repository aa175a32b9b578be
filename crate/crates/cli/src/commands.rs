use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use tignn_core::checkpoint::Checkpoint;
use tignn_core::fem::{generate_dataset, load_dataset, save_dataset, Dataset};
use tignn_core::graph::{normalization_stats, Normalization};
use tignn_core::io::{to_json, write_atomic};
use tignn_core::mesh::SolidMesh;
use tignn_core::render::{render_points, PhongMaterial, RenderBody, RenderOptions};
use tignn_core::state::{LoadCase, StateField, StateVariable, Trajectory};
use tignn_core::tignn::TignnModel;
use tignn_core::train::{degeneracy_rms, error_csv, evaluate, loss_csv, rollout, train, ErrorReport};
use tignn_core::{Error, Result};
use tignn_session::{replay, Scene, Script, ServeOptions};

use crate::config::{load_config, preset, ConfigFile, PipelineConfig};
use crate::manifest::ManifestBuilder;
use crate::{Cli, Command, Common};

pub fn run(cli: &Cli, stop: Arc<AtomicBool>) -> Result<()> {
    match &cli.command {
        Command::Datagen { common } => datagen(common),
        Command::Train { common, dataset } => train_cmd(common, dataset, &stop),
        Command::Eval {
            common,
            dataset,
            checkpoint,
            truth,
        } => eval_cmd(common, dataset, checkpoint.as_deref(), *truth),
        Command::Render {
            common,
            checkpoint,
            dataset,
            case,
        } => render_cmd(common, checkpoint, dataset.as_deref(), *case),
        Command::Serve {
            common,
            checkpoint,
            host,
            port,
            replay,
            record,
            max_ticks,
        } => {
            let opts = ServeOptions {
                addr: format!("{host}:{port}"),
                max_ticks: *max_ticks,
                record: record.clone(),
            };
            serve_cmd(common, checkpoint.as_deref(), replay.as_deref(), opts, stop)
        }
    }
}

fn resolve(common: &Common) -> Result<ConfigFile> {
    let mut file = match (&common.config, &common.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => ConfigFile::Pipeline(preset(name)?),
        (None, None) => ConfigFile::Pipeline(preset("beam-desk")?),
    };
    if let (ConfigFile::Pipeline(cfg), Some(seed)) = (&mut file, common.seed) {
        cfg.set_seed(seed);
    }
    Ok(file)
}

fn pipeline(common: &Common) -> Result<PipelineConfig> {
    match resolve(common)? {
        ConfigFile::Pipeline(cfg) => Ok(cfg),
        ConfigFile::Scene(..) => Err(Error::invalid("a scene file only configures `serve`")),
    }
}

/// Directory that relative mesh paths in the pipeline config resolve against.
fn config_base(common: &Common) -> PathBuf {
    common
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn datagen(common: &Common) -> Result<()> {
    let cfg = pipeline(common)?;
    let mut manifest = ManifestBuilder::start("datagen", &cfg, cfg.data.seed)?;
    let mesh = cfg.mesh.build(&config_base(common))?;
    log::info!(
        "simulating {} load cases on {} nodes, {} steps of {} s",
        cfg.data.load_positions,
        mesh.n_nodes(),
        cfg.data.nt,
        cfg.data.dt
    );
    let ds = generate_dataset(&mesh, &cfg.material, &cfg.data)?;
    let path = common.out.join("dataset.json");
    save_dataset(&ds, &path)?;
    manifest.output(&path)?;
    manifest.output(&common.out.join("dataset.mesh.json"))?;
    let m = manifest.finish(&common.out)?;
    log::info!("wrote {} ({} train / {} test cases), {}", path.display(), ds.train.len(), ds.test.len(), m.display());
    Ok(())
}

fn train_cmd(common: &Common, dataset: &Path, stop: &AtomicBool) -> Result<()> {
    let cfg = pipeline(common)?;
    let mut manifest = ManifestBuilder::start("train", &cfg, cfg.train.seed)?;
    let ds = load_dataset(dataset)?;
    manifest.input(dataset)?;
    let cases = ds.train_cases();
    let stats = normalization_stats(&ds.mesh, &cases)?;
    let mut model = TignnModel::new(cfg.train.model_config(), cfg.train.seed)?;
    log::info!(
        "training {} parameters on {} cases for {} epochs",
        model.parameter_count(),
        cases.len(),
        cfg.train.epochs
    );
    let every = (cfg.train.epochs / 20).max(1);
    let clock = Instant::now();
    let history = train(&mut model, &ds.mesh, &cases, &stats, &cfg.train, &mut |e| {
        if e.epoch % every == 0 || e.epoch + 1 == cfg.train.epochs {
            log::info!(
                "epoch {:>5}  data {:.4e}  degeneracy {:.4e}  ({:.1} s)",
                e.epoch,
                e.data,
                e.degeneracy,
                clock.elapsed().as_secs_f64()
            );
        }
        !stop.load(Ordering::SeqCst)
    })?;
    if history.len() < cfg.train.epochs {
        log::warn!("stopped after {} of {} epochs", history.len(), cfg.train.epochs);
        manifest.interrupted();
    }
    let ckpt_path = common.out.join("checkpoint.json");
    Checkpoint::new(&model, &stats, &cfg.train)?.save(&ckpt_path)?;
    let loss_path = common.out.join("loss.csv");
    write_atomic(&loss_path, loss_csv(&history))?;
    manifest.output(&ckpt_path)?;
    manifest.output(&loss_path)?;
    manifest.finish(&common.out)?;
    if let Some(last) = history.last() {
        log::info!("final data loss {:.4e}, wrote {}", last.data, ckpt_path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SplitSummary {
    split: String,
    cases: usize,
    median_q: f64,
    median_v: f64,
    median_sigma: f64,
    degeneracy_rms: Option<f64>,
}

#[derive(Serialize)]
struct EvalSummary {
    schema: String,
    splits: Vec<SplitSummary>,
}

fn eval_report(cases: &[&Trajectory], predict: &dyn Fn(&Trajectory) -> Result<Trajectory>) -> Result<ErrorReport> {
    let mut report = ErrorReport::default();
    for (i, truth) in cases.iter().enumerate() {
        let pred = predict(truth).map_err(|e| Error::InCase {
            case: i,
            source: Box::new(e),
        })?;
        report.merge(&evaluate(&pred, truth)?);
    }
    Ok(report)
}

fn median(report: &ErrorReport, var: StateVariable) -> f64 {
    report.summary(var).map(|b| b.med).unwrap_or(f64::NAN)
}

fn eval_cmd(common: &Common, dataset: &Path, checkpoint: Option<&Path>, truth: bool) -> Result<()> {
    let cfg = pipeline(common)?;
    let mut manifest = ManifestBuilder::start("eval", &cfg, cfg.train.seed)?;
    let ds = load_dataset(dataset)?;
    manifest.input(dataset)?;
    let model = match checkpoint.filter(|_| !truth) {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            manifest.input(path)?;
            Some((ckpt.model()?, ckpt.normalization))
        }
        None => None,
    };
    let predict = |c: &Trajectory| match &model {
        Some((m, stats)) => rollout(m, &ds.mesh, &c.snapshots[0], &c.load, c.steps(), c.dt, stats),
        None => Ok(c.clone()),
    };
    let mut reports = Vec::new();
    let mut summary = EvalSummary {
        schema: "eval/1".into(),
        splits: Vec::new(),
    };
    for (split, cases) in [("train", ds.train_cases()), ("test", ds.test_cases())] {
        let report = eval_report(&cases, &predict)?;
        let degeneracy = match &model {
            Some((m, stats)) if !cases.is_empty() => Some(degeneracy_rms(m, &ds.mesh, &cases, stats)?),
            _ => None,
        };
        summary.splits.push(SplitSummary {
            split: split.into(),
            cases: cases.len(),
            median_q: median(&report, StateVariable::Position),
            median_v: median(&report, StateVariable::Velocity),
            median_sigma: median(&report, StateVariable::Stress),
            degeneracy_rms: degeneracy,
        });
        reports.push((split, report));
    }
    let rows: Vec<(&str, &ErrorReport)> = reports.iter().map(|(s, r)| (*s, r)).collect();
    let csv_path = common.out.join("errors.csv");
    write_atomic(&csv_path, error_csv(&rows))?;
    let summary_path = common.out.join("eval.json");
    write_atomic(&summary_path, to_json(&summary, "evaluation summary")?)?;
    manifest.output(&csv_path)?;
    manifest.output(&summary_path)?;
    manifest.finish(&common.out)?;
    for s in &summary.splits {
        log::info!(
            "{:<5} median relative L2  q {:.4}  v {:.4}  sigma {:.4}",
            s.split,
            s.median_q,
            s.median_v,
            s.median_sigma
        );
    }
    Ok(())
}

fn render_cmd(common: &Common, checkpoint: &Path, dataset: Option<&Path>, case: Option<usize>) -> Result<()> {
    let cfg = pipeline(common)?;
    let mut manifest = ManifestBuilder::start("render", &cfg, cfg.train.seed)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    manifest.input(checkpoint)?;
    let (mesh, load) = match dataset {
        Some(path) => {
            let ds: Dataset = load_dataset(path)?;
            manifest.input(path)?;
            let load = match case {
                Some(i) => ds
                    .cases
                    .get(i)
                    .map(|c| c.load.clone())
                    .ok_or_else(|| Error::invalid(format!("case {i} out of range (dataset has {})", ds.cases.len())))?,
                None => LoadCase::unloaded(),
            };
            (ds.mesh, load)
        }
        None => (cfg.mesh.build(&config_base(common))?, LoadCase::unloaded()),
    };
    let model = ckpt.model()?;
    let frames = cfg.render.frames.unwrap_or(cfg.data.nt);
    let initial = StateField::rest(&mesh.rest_positions);
    let traj = rollout(&model, &mesh, &initial, &load, frames, ckpt.dt, &ckpt.normalization)?;
    let dir = common.out.join("frames");
    for (t, state) in traj.snapshots.iter().enumerate() {
        let path = dir.join(format!("frame_{t:04}.ppm"));
        let img = render_state(&cfg, &mesh, state, &ckpt.normalization)?;
        img.save_ppm(&path)?;
        manifest.output(&path)?;
    }
    manifest.finish(&common.out)?;
    log::info!("wrote {} frames to {}", traj.snapshots.len(), dir.display());
    Ok(())
}

/// One frame of `state` as seen by the configured camera.
pub fn render_state(
    cfg: &PipelineConfig,
    mesh: &SolidMesh,
    state: &StateField,
    stats: &Normalization,
) -> Result<tignn_core::render::Image> {
    let r = &cfg.render;
    let positions = state.positions();
    let normals = mesh.vertex_normals(&positions);
    let values = r.scalar.eval(state);
    let [lo, hi] = r.colormap_range.unwrap_or_else(|| r.scalar.default_range(stats));
    let pose = Default::default();
    let opts = RenderOptions {
        width: r.width,
        height: r.height,
        point_radius: r.point_radius,
        material: PhongMaterial::default(),
        range: (lo, hi),
        wireframe: r.wireframe,
        ..RenderOptions::default()
    };
    render_points(
        &r.camera,
        &[RenderBody {
            pose: &pose,
            positions: &positions,
            triangles: &mesh.surface_triangles,
            normals: &normals,
            values: &values,
        }],
        &opts,
    )
}

fn serve_cmd(
    common: &Common,
    checkpoint: Option<&Path>,
    script: Option<&Path>,
    opts: ServeOptions,
    stop: Arc<AtomicBool>,
) -> Result<()> {
    let (scene_cfg, base) = match resolve(common)? {
        ConfigFile::Scene(cfg, base) => (cfg, base),
        ConfigFile::Pipeline(cfg) => {
            let ckpt = checkpoint.ok_or_else(|| Error::invalid("serving a preset needs --checkpoint"))?;
            (cfg.scene_config(ckpt, None), PathBuf::new())
        }
    };
    let mut manifest = ManifestBuilder::start("serve", &scene_cfg, 0)?;
    for b in &scene_cfg.bodies {
        manifest.input(&base.join(&b.checkpoint))?;
    }
    let mut scene = Scene::from_config(&scene_cfg, &base)?;
    match script {
        Some(path) => {
            let script = Script::load(path)?;
            manifest.input(path)?;
            let mut stream = String::new();
            replay(&mut scene, &script, &mut |line| {
                stream.push_str(line);
                stream.push('\n');
            })?;
            let out = common.out.join("frames.jsonl");
            write_atomic(&out, stream)?;
            manifest.output(&out)?;
            log::info!("replayed {} ticks into {}", script.ticks, out.display());
        }
        None => {
            let summary = tignn_session::serve(scene, &opts, stop)?;
            log::info!(
                "served {} ticks to {} viewers ({} messages)",
                summary.ticks,
                summary.connections,
                summary.messages
            );
            if let Some(rec) = &opts.record {
                manifest.output(rec)?;
            }
        }
    }
    manifest.finish(&common.out)?;
    Ok(())
}
