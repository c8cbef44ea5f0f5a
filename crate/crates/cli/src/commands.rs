use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use densefield::eval::{
    carve_scene, evaluate_depth, export_density_slice, nvs_scores, occupancy_metrics, CarvedOccupancy, DensityFn,
    DepthCarve, EvalCuboid, OccupancyLabels, OracleDensity,
};
use densefield::field::{DensityModel, ExtractorMode};
use densefield::geometry::io::{write_pfm, write_png};
use densefield::geometry::{normalize_inverse_depth, Camera, ImageGrid};
use densefield::renderer::{render_depth_map, render_novel_view, Frame};
use densefield::synthworld::{make_benchmark_scene, BenchmarkScene, CameraRole};
use densefield::trainer::{TrainConfig, TrainScene, Trainer};
use serde_json::json;

use crate::manifest::{unix_now, RunManifest, RunRecord};
use crate::{
    EvalDepthArgs, EvalNvsArgs, EvalOccArgs, Failure, GenSceneArgs, LabelSource, ModeArg, ModelArgs, Predictor,
    RenderArgs, RenderOutput, RoleArg, TrainArgs,
};

type CmdResult = Result<(), Failure>;

pub const CHECKPOINT_NAME: &str = "checkpoint.bin";
pub const METRICS_NAME: &str = "metrics.jsonl";
pub const CONFIG_NAME: &str = "config.json";

fn role(r: RoleArg) -> CameraRole {
    match r {
        RoleArg::Input => CameraRole::Input,
        RoleArg::Stereo => CameraRole::Stereo,
        RoleArg::Previous => CameraRole::Previous,
        RoleArg::Lateral => CameraRole::Lateral,
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))
}

fn read_scene(path: &Path) -> Result<BenchmarkScene, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    BenchmarkScene::from_json(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn scene_echo(b: &BenchmarkScene) -> serde_json::Value {
    json!({ "profile": b.profile, "seed": b.seed })
}

fn finish(dir: &Path, command: &str, config: serde_json::Value, seed: u64, artifacts: Vec<PathBuf>, threads: usize, started: (f64, Instant)) -> CmdResult {
    let run = RunRecord {
        config,
        seed,
        artifacts,
        threads,
        started_unix: started.0,
        wall_seconds: started.1.elapsed().as_secs_f64(),
        timings: Default::default(),
    };
    RunManifest::record(dir, command, run).map_err(|e| Failure::Input(format!("cannot write manifest: {e}")))
}

fn parse_resolution(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(format!("resolution must look like 64x48, got `{s}`"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

pub fn gen_scene(a: &GenSceneArgs, threads: usize) -> CmdResult {
    let started = (unix_now(), Instant::now());
    let mut bench = make_benchmark_scene(a.seed, &a.profile).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(r) = &a.resolution {
        let (w, h) = parse_resolution(r)?;
        bench.rig = bench.rig.with_resolution(w, h).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let dir = parent_dir(&a.out);
    ensure_dir(&dir)?;
    fs::write(&a.out, bench.to_json()? + "\n")?;
    let config = json!({ "profile": a.profile, "resolution": a.resolution });
    finish(&dir, "gen-scene", config, a.seed, vec![a.out.clone()], threads, started)
}

fn effective_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::desk(),
    };
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.lr_final {
        cfg.lr_final = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Conv => ExtractorMode::Conv,
            ModeArg::Direct => ExtractorMode::Direct,
        };
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Keeps log lines of steps before `start` so a resumed run rewrites the
/// same bytes as an uninterrupted one.
fn retained_log(path: &Path, start: usize) -> Vec<String> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .filter(|l| {
            serde_json::from_str::<serde_json::Value>(l)
                .ok()
                .and_then(|v| v["step"].as_u64())
                .is_some_and(|s| (s as usize) < start)
        })
        .map(str::to_string)
        .collect()
}

pub fn train(a: &TrainArgs, threads: usize) -> CmdResult {
    let started = (unix_now(), Instant::now());
    let cfg = effective_config(a)?;
    let roles: Vec<CameraRole> = a.views.iter().map(|&r| role(r)).filter(|r| *r != CameraRole::Input).collect();
    let benches = a.scenes.iter().map(|p| read_scene(p)).collect::<Result<Vec<_>, _>>()?;
    let pool = benches
        .iter()
        .map(|b| TrainScene::from_benchmark(b, &roles))
        .collect::<Result<Vec<_>, _>>()?;
    let (w, h) = {
        let cam = &benches[0].rig.input;
        (cam.width(), cam.height())
    };
    ensure_dir(&a.out)?;
    let ck_path = a.out.join(CHECKPOINT_NAME);
    let mut trainer = if a.resume {
        if !ck_path.exists() {
            return Err(Failure::Input(format!("nothing to resume: {} does not exist", ck_path.display())));
        }
        Trainer::load(&ck_path, Some(cfg.clone()))?
    } else {
        Trainer::new(cfg.clone(), w, h).map_err(|e| Failure::Usage(e.to_string()))?
    };
    let start = trainer.step;
    let log_path = a.out.join(METRICS_NAME);
    let mut lines = retained_log(&log_path, if a.resume { start } else { 0 });
    let (mut ran, mut skipped) = (0usize, 0usize);
    let mut last = None;
    let t0 = Instant::now();
    let stop = a.until.map_or(cfg.steps, |u| u.min(cfg.steps));
    while trainer.step < stop {
        let r = trainer.train_step(&pool)?;
        ran += 1;
        skipped += r.skipped as usize;
        let done = trainer.step == stop;
        if trainer.step == cfg.steps || (a.log_every > 0 && (r.step + 1) % a.log_every == 0) {
            lines.push(serde_json::to_string(&r)?);
        }
        if a.checkpoint_every > 0 && trainer.step % a.checkpoint_every == 0 && !done {
            trainer.save(&ck_path)?;
        }
        last = Some(r);
    }
    let train_seconds = t0.elapsed().as_secs_f64();
    trainer.save(&ck_path)?;
    let mut log = fs::File::create(&log_path)?;
    for l in &lines {
        writeln!(log, "{l}")?;
    }
    write_json(&a.out.join(CONFIG_NAME), &cfg)?;
    let config = json!({
        "train": cfg,
        "scenes": a.scenes,
        "views": roles,
        "resumed_from_step": a.resume.then_some(start),
    });
    let artifacts = vec![ck_path, log_path, a.out.join(CONFIG_NAME)];
    let run = RunRecord {
        config,
        seed: cfg.seed,
        artifacts,
        threads,
        started_unix: started.0,
        wall_seconds: started.1.elapsed().as_secs_f64(),
        timings: [
            ("train_seconds".to_string(), train_seconds),
            ("seconds_per_step".to_string(), if ran > 0 { train_seconds / ran as f64 } else { 0.0 }),
        ]
        .into_iter()
        .collect(),
    };
    RunManifest::record(&a.out, "train", run).map_err(|e| Failure::Input(format!("cannot write manifest: {e}")))?;
    if let Some(r) = last {
        println!(
            "step {} loss {:.5} grad_norm {:.4} lr {:.2e} skipped {}",
            r.step + 1,
            r.loss,
            r.grad_norm,
            r.lr,
            trainer.skipped
        );
    }
    let bad_params = trainer.model.params().iter().any(|t| t.data().iter().any(|v| !v.is_finite()));
    if bad_params || (ran > 0 && skipped == ran) {
        return Err(Failure::Numerical(format!(
            "training diverged: {skipped} of {ran} steps had a non-finite loss or gradient"
        )));
    }
    Ok(())
}

/// A checkpointed model conditioned on the scene's input view.
struct Loaded {
    model: DensityModel<f32>,
    train: Option<TrainConfig>,
    bench: BenchmarkScene,
    input_image: ImageGrid,
}

impl Loaded {
    fn samples(&self, m: &ModelArgs) -> usize {
        m.samples
            .or(self.train.as_ref().map(|c| c.samples))
            .unwrap_or(TrainConfig::desk().samples)
    }

    fn tau(&self) -> f64 {
        self.train.as_ref().map_or(TrainConfig::default().tau, |c| c.tau)
    }
}

fn load_model(m: &ModelArgs) -> Result<Loaded, Failure> {
    let path = m
        .checkpoint
        .as_ref()
        .ok_or_else(|| Failure::Usage("--checkpoint is required".into()))?;
    if !path.exists() {
        return Err(Failure::Input(format!("checkpoint {} does not exist", path.display())));
    }
    let bench = read_scene(&m.scene)?;
    let trainer = Trainer::load(path, None)?;
    let mut model = trainer.model;
    let (input_image, _) = bench.scene.render_gt(&bench.rig.input);
    let fc = model.config();
    if (fc.width, fc.height) != (input_image.width(), input_image.height()) {
        return Err(Failure::Input(format!(
            "checkpoint expects {}x{} input, scene renders {}x{}",
            fc.width,
            fc.height,
            input_image.width(),
            input_image.height()
        )));
    }
    model.set_input(&input_image, &bench.rig.input)?;
    Ok(Loaded {
        model,
        train: Some(trainer.config),
        bench,
        input_image,
    })
}

fn rig_camera(bench: &BenchmarkScene, r: RoleArg) -> Result<Camera, Failure> {
    let r = role(r);
    if r == CameraRole::Input {
        return Ok(bench.rig.input.clone());
    }
    bench
        .rig
        .auxiliary
        .iter()
        .find(|c| c.role == r)
        .map(|c| c.camera.clone())
        .ok_or_else(|| Failure::Input(format!("scene rig has no {r:?} camera")))
}

/// Inverse depth scaled so `z_near` is white; misses are black.
fn depth_preview(depth: &ImageGrid, z_near: f64, z_far: f64) -> ImageGrid {
    let data = depth
        .data()
        .iter()
        .map(|&d| if d > 0.0 { normalize_inverse_depth(d as f64, z_near, z_far) as f32 } else { 0.0 })
        .collect();
    ImageGrid::new(1, depth.height(), depth.width(), data).expect("same shape")
}

pub fn render(a: &RenderArgs, threads: usize) -> CmdResult {
    let started = (unix_now(), Instant::now());
    let l = load_model(&a.model)?;
    let camera = match &a.camera {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<Camera>(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
        }
        None => rig_camera(&l.bench, a.role)?,
    };
    if !(a.slice_cell > 0.0) {
        return Err(Failure::Usage("--slice-cell must be positive".into()));
    }
    ensure_dir(&a.out)?;
    let samples = l.samples(&a.model);
    let mut artifacts = Vec::new();
    if a.outputs.contains(&RenderOutput::Depth) {
        let depth = render_depth_map(&l.model, &camera, samples, a.model.seed)?;
        let (p, q) = (a.out.join("depth.pfm"), a.out.join("depth.png"));
        write_pfm(&p, &depth)?;
        write_png(&q, &depth_preview(&depth, camera.z_near(), camera.z_far()))?;
        artifacts.extend([p, q]);
    }
    if a.outputs.contains(&RenderOutput::View) {
        let input = Frame::new(&l.input_image, &l.bench.rig.input);
        let view = render_novel_view(&l.model, input, &camera, samples, l.tau(), a.model.seed)?;
        let (p, q) = (a.out.join("view.png"), a.out.join("valid.png"));
        write_png(&p, &view.image)?;
        write_png(&q, &view.valid)?;
        artifacts.extend([p, q]);
    }
    if a.outputs.contains(&RenderOutput::Slice) {
        let c = EvalCuboid::default();
        let res = [
            ((c.x[1] - c.x[0]) / a.slice_cell).round().max(1.0) as usize,
            ((c.z[1] - c.z[0]) / a.slice_cell).round().max(1.0) as usize,
        ];
        let slice = export_density_slice(&l.model, c.x, c.z, c.y, res, c.counts[1], None)?;
        let (p, q) = (a.out.join("slice.png"), a.out.join("slice.pfm"));
        write_png(&p, &slice)?;
        write_pfm(&q, &slice)?;
        artifacts.extend([p, q]);
    }
    let config = json!({
        "checkpoint": a.model.checkpoint,
        "scene": scene_echo(&l.bench),
        "camera": camera,
        "samples": samples,
        "outputs": a.outputs.iter().map(|o| format!("{o:?}").to_lowercase()).collect::<Vec<_>>(),
        "slice_cell_m": a.slice_cell,
    });
    finish(&a.out, "render", config, a.model.seed, artifacts, threads, started)
}

fn write_report(out: &Path, command: &str, report: serde_json::Value, seed: u64, threads: usize, started: (f64, Instant)) -> CmdResult {
    let dir = parent_dir(out);
    ensure_dir(&dir)?;
    write_json(out, &report)?;
    finish(&dir, command, report["config"].clone(), seed, vec![out.to_path_buf()], threads, started)
}

pub fn eval_depth(a: &EvalDepthArgs, threads: usize) -> CmdResult {
    let started = (unix_now(), Instant::now());
    let l = load_model(&a.model)?;
    let camera = &l.bench.rig.input;
    let (_, gt) = l.bench.scene.render_gt(camera);
    let samples = l.samples(&a.model);
    let m = evaluate_depth(&l.model, camera, &gt, samples, a.model.seed, a.max_depth)?;
    let report = json!({
        "command": "eval-depth",
        "metrics": {
            "abs_rel": m.abs_rel, "sq_rel": m.sq_rel, "rmse": m.rmse, "rmse_log": m.rmse_log,
            "delta1": m.delta1, "delta2": m.delta2, "delta3": m.delta3,
        },
        "counts": { "valid_pixels": m.valid_pixels, "pixels": gt.data().len() },
        "config": {
            "checkpoint": a.model.checkpoint, "scene": scene_echo(&l.bench), "samples": samples,
            "max_depth_m": a.max_depth, "train": l.train,
        },
        "seed": a.model.seed,
    });
    write_report(&a.out, "eval-depth", report, a.model.seed, threads, started)?;
    println!("abs_rel {:.4} delta1 {:.4} valid {}", m.abs_rel, m.delta1, m.valid_pixels);
    Ok(())
}

pub fn eval_occ(a: &EvalOccArgs, threads: usize) -> CmdResult {
    let started = (unix_now(), Instant::now());
    let cuboid = EvalCuboid::default();
    let points = cuboid.points();
    let (bench, loaded) = if a.predictor == Predictor::Oracle && a.model.checkpoint.is_none() {
        (read_scene(&a.model.scene)?, None)
    } else {
        let l = load_model(&a.model)?;
        (l.bench.clone(), Some(l))
    };
    if a.scan_rays == 0 || a.bins == 0 {
        return Err(Failure::Usage("--scan-rays and --bins must be positive".into()));
    }
    let carved: CarvedOccupancy = carve_scene(&bench.scene, &bench.trajectory, a.scan_rays, cuboid.y, a.bins);
    let labels = match a.labels {
        LabelSource::Carved => OccupancyLabels::carved(&carved, &points),
        LabelSource::Oracle => OccupancyLabels::oracle(&bench.scene, &carved, &points),
    };
    let oracle = OracleDensity::new(&bench.scene);
    let mut samples = None;
    let report = {
        let density: Box<dyn DensityFn + '_> = match (a.predictor, &loaded) {
            (Predictor::Oracle, _) => Box::new(oracle),
            (Predictor::Model, Some(l)) => Box::new(l.model.clone()),
            (Predictor::DepthCarve | Predictor::DepthCarve4m, Some(l)) => {
                let s = l.samples(&a.model);
                samples = Some(s);
                Box::new(DepthCarve {
                    model: &l.model,
                    samples: s,
                    seed: a.model.seed,
                    margin: (a.predictor == Predictor::DepthCarve4m).then_some(4.0),
                })
            }
            _ => unreachable!("a checkpoint is loaded for every non-oracle predictor"),
        };
        occupancy_metrics(density.as_ref(), &labels, &points)?
    };
    let report_json = json!({
        "command": "eval-occ",
        "metrics": { "o_acc": report.o_acc, "ie_acc": report.ie_acc, "ie_rec": report.ie_rec },
        "counts": {
            "points": report.n_points,
            "invisible": report.n_invisible,
            "invisible_empty": report.n_invisible_empty,
        },
        "config": {
            "checkpoint": a.model.checkpoint, "scene": scene_echo(&bench),
            "predictor": format!("{:?}", a.predictor).to_lowercase(),
            "labels": format!("{:?}", a.labels).to_lowercase(),
            "scan_rays": a.scan_rays, "bins": a.bins, "samples": samples, "cuboid": cuboid,
            "train": loaded.as_ref().and_then(|l| l.train.clone()),
        },
        "seed": a.model.seed,
    });
    write_report(&a.out, "eval-occ", report_json, a.model.seed, threads, started)?;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "o_acc {} ie_acc {} ie_rec {}",
        show(report.o_acc),
        show(report.ie_acc),
        show(report.ie_rec)
    );
    Ok(())
}

pub fn eval_nvs(a: &EvalNvsArgs, threads: usize) -> CmdResult {
    let started = (unix_now(), Instant::now());
    let l = load_model(&a.model)?;
    let samples = l.samples(&a.model);
    let mut named: Vec<(String, Camera)> = vec![("input".into(), l.bench.rig.input.clone())];
    let aux = &l.bench.rig.auxiliary;
    for (i, c) in aux.iter().enumerate() {
        if a.views.iter().any(|&r| role(r) == c.role) && c.role != CameraRole::Input {
            let base = format!("{:?}", c.role).to_lowercase();
            // Roles can repeat (two laterals); number them in rig order.
            let name = if aux.iter().filter(|o| o.role == c.role).count() > 1 {
                format!("{base}_{}", aux[..i].iter().filter(|o| o.role == c.role).count())
            } else {
                base
            };
            named.push((name, c.camera.clone()));
        }
    }
    let refs: Vec<ImageGrid> = named.iter().map(|(_, c)| l.bench.scene.render_gt(c).0).collect();
    let targets: Vec<(&ImageGrid, &Camera)> = refs.iter().zip(named.iter().map(|(_, c)| c)).collect();
    let input = Frame::new(&l.input_image, &l.bench.rig.input);
    let scores = nvs_scores(&l.model, input, &targets, samples, l.tau(), a.model.seed)?;
    let views: Vec<serde_json::Value> = named
        .iter()
        .zip(&scores)
        .map(|((name, _), s)| json!({ "view": name, "psnr": s.psnr, "ssim": s.ssim, "valid_fraction": s.valid_fraction }))
        .collect();
    let report = json!({
        "command": "eval-nvs",
        "metrics": {
            "self_psnr": scores[0].psnr,
            "views": views,
        },
        "counts": { "views": scores.len(), "pixels_per_view": refs[0].width() * refs[0].height() },
        "config": {
            "checkpoint": a.model.checkpoint, "scene": scene_echo(&l.bench), "samples": samples,
            "tau": l.tau(), "train": l.train,
        },
        "seed": a.model.seed,
    });
    write_report(&a.out, "eval-nvs", report, a.model.seed, threads, started)?;
    for ((name, _), s) in named.iter().zip(&scores) {
        println!("{name}: psnr {:.2} ssim {:.4} valid {:.3}", s.psnr, s.ssim, s.valid_fraction);
    }
    Ok(())
}
