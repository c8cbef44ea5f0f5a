//! Self-supervised training: frame partitioning, patch sampling, rendering
//! with color sampling, Adam updates and checkpoints.

mod adam;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::field::{
    load_checkpoint, save_checkpoint, Activation, DensityModel, ExtractorMode, FieldConfig, FieldVars,
};
use crate::geometry::{Camera, ImageGrid};
use crate::loss::{invalid_ray_mask, patch_loss_node, LossWeights};
use crate::renderer::{render_nodes, Frame, RayBundle};
use crate::synthworld::{BenchmarkScene, CameraRole};

pub use adam::{adam_update, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Patches per batch item.
    pub patches: usize,
    pub patch_size: usize,
    /// Samples per ray.
    pub samples: usize,
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    pub lambda_eas: f64,
    /// Invalid-ray threshold on IV_raw.
    pub tau: f64,
    pub lr: f64,
    pub lr_final: f64,
    /// Fraction of the run (at the end) trained with `lr_final`.
    pub lr_drop_fraction: f64,
    pub steps: usize,
    pub seed: u64,
    pub z_near: f64,
    pub z_far: f64,
    pub mode: ExtractorMode,
    pub channels: usize,
    pub hidden: usize,
    pub n_freq: usize,
    pub activation: Activation,
    pub direct_init: f64,
    /// Probability of a frame landing in the loss set.
    pub partition_prob: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            patches: 32,
            patch_size: 8,
            samples: 64,
            lambda_l1: 0.15,
            lambda_ssim: 0.85,
            lambda_eas: 0.002,
            tau: 0.3,
            lr: 1e-4,
            lr_final: 1e-5,
            lr_drop_fraction: 0.2,
            steps: 1000,
            seed: 0,
            z_near: 2.0,
            z_far: 40.0,
            mode: ExtractorMode::Conv,
            channels: 64,
            hidden: 64,
            n_freq: 7,
            activation: Activation::Softplus,
            direct_init: 0.5,
            partition_prob: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Scaled-down settings for a single CPU core.
    pub fn desk() -> Self {
        Self {
            batch_size: 4,
            patches: 16,
            samples: 32,
            channels: 32,
            lr: 1e-3,
            lr_final: 1e-4,
            ..Self::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            l1: self.lambda_l1,
            ssim: self.lambda_ssim,
            eas: self.lambda_eas,
        }
    }

    pub fn field_config(&self, width: usize, height: usize) -> FieldConfig {
        FieldConfig {
            hidden: self.hidden,
            n_freq: self.n_freq,
            activation: self.activation,
            direct_init: self.direct_init,
            ..FieldConfig::new(self.mode, self.channels, width, height)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.patches == 0 || self.patch_size == 0 || self.samples == 0 {
            return bad("batch_size, patches, patch_size and samples must be positive");
        }
        if [self.lambda_l1, self.lambda_ssim, self.lambda_eas].iter().any(|l| !(*l >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0,1)");
        }
        if !(self.lr >= 0.0 && self.lr_final >= 0.0) || !(0.0..=1.0).contains(&self.lr_drop_fraction) {
            return bad("learning rates must be non-negative and lr_drop_fraction in [0,1]");
        }
        if !(self.partition_prob > 0.0 && self.partition_prob < 1.0) {
            return bad("partition_prob must lie in (0,1)");
        }
        if !(self.z_near > 0.0 && self.z_far > self.z_near) {
            return bad("need 0 < z_near < z_far");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0,1) and eps be positive");
        }
        Ok(())
    }
}

/// Learning rate at `step`: `base` until the last `drop_fraction` of the run,
/// `final_lr` afterwards.
pub fn lr_schedule(step: usize, total: usize, base: f64, final_lr: f64, drop_fraction: f64) -> f64 {
    let drop_at = (total as f64 * (1.0 - drop_fraction)).round() as usize;
    if step >= drop_at {
        final_lr
    } else {
        base
    }
}

/// Splits frame indices `0..n` into (loss, render) sets; each frame goes to
/// the loss set with probability `p`, redrawn until both sets are nonempty.
pub fn partition_frames(n: usize, p: f64, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewFrames(n));
    }
    loop {
        let (loss, render): (Vec<usize>, Vec<usize>) = (0..n).partition(|_| rng.gen_bool(p));
        if !loss.is_empty() && !render.is_empty() {
            return Ok((loss, render));
        }
    }
}

/// Patch location: frame index and top-left texel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLocation {
    pub frame: usize,
    pub top: usize,
    pub left: usize,
}

/// `count` patches of `size × size`, frames uniform over `frames`, top-left
/// uniform over positions that keep the patch inside a `width × height` image.
pub fn sample_patches(
    frames: &[usize],
    count: usize,
    size: usize,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PatchLocation>> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("no frames to sample patches from".into()));
    }
    if size == 0 || size > width || size > height {
        return Err(Error::InvalidConfig(format!(
            "patch size {size} does not fit a {width}x{height} image"
        )));
    }
    Ok((0..count)
        .map(|_| PatchLocation {
            frame: frames[rng.gen_range(0..frames.len())],
            top: rng.gen_range(0..=height - size),
            left: rng.gen_range(0..=width - size),
        })
        .collect())
}

/// Frames of one training scene; frame 0 is the input.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub frames: Vec<(ImageGrid, Camera)>,
}

impl TrainScene {
    pub fn new(frames: Vec<(ImageGrid, Camera)>) -> Result<Self> {
        let Some((first, cam)) = frames.first() else {
            return Err(Error::TooFewFrames(0));
        };
        for (img, c) in &frames {
            if img.channels() != 3 || (img.width(), img.height()) != (c.width(), c.height()) {
                return Err(Error::InvalidImage(format!(
                    "frame is {}x{}x{}, camera expects 3x{}x{}",
                    img.channels(),
                    img.height(),
                    img.width(),
                    c.height(),
                    c.width()
                )));
            }
            if (img.width(), img.height()) != (first.width(), first.height())
                || c.z_near() != cam.z_near()
                || c.z_far() != cam.z_far()
            {
                return Err(Error::InvalidImage("frames must share resolution and depth range".into()));
            }
        }
        Ok(Self { frames })
    }

    /// Ground-truth renders of the input camera plus the auxiliary cameras
    /// whose role is listed.
    pub fn from_benchmark(bench: &BenchmarkScene, roles: &[CameraRole]) -> Result<Self> {
        let frames = bench
            .rig
            .select(roles)
            .into_iter()
            .map(|c| (bench.scene.render_gt(&c).0, c))
            .collect();
        Self::new(frames)
    }

    pub fn input(&self) -> (&ImageGrid, &Camera) {
        let (i, c) = &self.frames[0];
        (i, c)
    }
}

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    /// Fraction of patch pixels dropped by the invalid-ray policy.
    pub discarded_fraction: f64,
    /// The loss or gradient was non-finite; weights were left untouched.
    pub skipped: bool,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: DensityModel<f32>,
    pub adam: AdamState,
    /// Steps taken so far, skipped ones included.
    pub step: usize,
    pub skipped: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, width: usize, height: usize) -> Result<Self> {
        config.validate()?;
        let model = DensityModel::new(config.field_config(width, height), config.seed)?;
        Ok(Self::from_model(config, model))
    }

    pub fn from_model(config: TrainConfig, model: DensityModel<f32>) -> Self {
        let adam = AdamState::new(model.params(), config.beta1, config.beta2, config.adam_eps);
        Self {
            config,
            model,
            adam,
            step: 0,
            skipped: 0,
        }
    }

    fn check_scene(&self, scene: &TrainScene) -> Result<()> {
        let (img, cam) = scene.input();
        let fc = self.model.config();
        if (img.width(), img.height()) != (fc.width, fc.height) {
            return Err(Error::InvalidConfig(format!(
                "scene resolution {}x{} differs from the model's {}x{}",
                img.width(),
                img.height(),
                fc.width,
                fc.height
            )));
        }
        if cam.z_near() != self.config.z_near || cam.z_far() != self.config.z_far {
            return Err(Error::InvalidConfig(format!(
                "scene depth range [{}, {}] differs from the configured [{}, {}]",
                cam.z_near(),
                cam.z_far(),
                self.config.z_near,
                self.config.z_far
            )));
        }
        if scene.frames.len() < 2 {
            return Err(Error::TooFewFrames(scene.frames.len()));
        }
        Ok(())
    }

    /// One step over `batch_size` items drawn round-robin from `pool`.
    pub fn train_step(&mut self, pool: &[TrainScene]) -> Result<StepReport> {
        if pool.is_empty() {
            return Err(Error::InvalidConfig("empty scene pool".into()));
        }
        for s in pool {
            self.check_scene(s)?;
        }
        let cfg = &self.config;
        let lr = lr_schedule(self.step, cfg.steps, cfg.lr, cfg.lr_final, cfg.lr_drop_fraction);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
        rng.set_stream(self.step as u64);
        let weights = cfg.loss_weights();

        let mut g = Graph::<f32>::new();
        let vars = self.model.bind(&mut g, true);
        let mut total = None;
        let (mut kept, mut pixels) = (0usize, 0usize);
        for item in 0..cfg.batch_size {
            let scene = &pool[(self.step * cfg.batch_size + item) % pool.len()];
            let ray_seed = rng.gen::<u64>();
            let (k, n, loss) = item_loss(&mut g, &self.model, &vars, scene, cfg, &weights, ray_seed, &mut rng)?;
            kept += k;
            pixels += n;
            total = Some(match total {
                None => loss,
                Some(t) => g.add(t, loss),
            });
        }
        let total = total.expect("batch_size > 0");
        let loss = g.value(total).item() as f64;
        let step = self.step;
        self.step += 1;
        let mut report = StepReport {
            step,
            loss,
            grad_norm: 0.0,
            lr,
            discarded_fraction: 1.0 - kept as f64 / pixels.max(1) as f64,
            skipped: false,
        };
        if !loss.is_finite() {
            self.skipped += 1;
            report.skipped = true;
            return Ok(report);
        }
        let mut grads = g.backward(total)?;
        let grads: Vec<Tensor<f32>> = vars
            .params
            .iter()
            .zip(self.model.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        let norm = grads.iter().map(|t| t.sum_sq()).sum::<f64>().sqrt();
        report.grad_norm = norm;
        if !norm.is_finite() {
            self.skipped += 1;
            report.skipped = true;
            return Ok(report);
        }
        adam_update(self.model.params_mut(), &grads, &mut self.adam, lr);
        Ok(report)
    }

    /// Caches the input frame of `scene` in the model for evaluation.
    pub fn prepare_eval(&mut self, scene: &TrainScene) -> Result<()> {
        let (img, cam) = scene.input();
        self.model.set_input(img, cam)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut extra = Vec::with_capacity(2 * self.adam.m.len());
        for (name, (m, v)) in self.model.param_names().iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            extra.push((format!("adam.m.{name}"), m.clone()));
            extra.push((format!("adam.v.{name}"), v.clone()));
        }
        let meta = serde_json::json!({
            "train": self.config,
            "step": self.step,
            "skipped": self.skipped,
            "adam_step": self.adam.t,
        });
        save_checkpoint(path, &self.model, &extra, &meta)
    }

    /// Restores model, optimizer and step count. The stored configuration is
    /// used unless `config` is given (e.g. to extend `steps`).
    pub fn load(path: impl AsRef<Path>, config: Option<TrainConfig>) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let meta = &ck.meta;
        let stored: TrainConfig = serde_json::from_value(meta["train"].clone())
            .map_err(|e| Error::MalformedCheckpoint(format!("training state: {e}")))?;
        let config = config.unwrap_or(stored);
        config.validate()?;
        let field = ck.model.config();
        let expected = config.field_config(field.width, field.height);
        if &expected != field {
            return Err(Error::InvalidConfig(
                "training configuration does not match the checkpointed model".into(),
            ));
        }
        let get = |k: &str| {
            meta[k]
                .as_u64()
                .ok_or_else(|| Error::MalformedCheckpoint(format!("missing `{k}` in metadata")))
        };
        let (step, skipped, adam_step) = (get("step")? as usize, get("skipped")? as usize, get("adam_step")?);
        let mut trainer = Self::from_model(config, ck.model);
        let names = trainer.model.param_names().to_vec();
        for (i, name) in names.iter().enumerate() {
            for (prefix, dst) in [("adam.m.", &mut trainer.adam.m[i]), ("adam.v.", &mut trainer.adam.v[i])] {
                let key = format!("{prefix}{name}");
                let (_, t) = ck
                    .extra
                    .iter()
                    .find(|(n, _)| *n == key)
                    .ok_or_else(|| Error::MalformedCheckpoint(format!("missing optimizer tensor `{key}`")))?;
                if t.shape() != dst.shape() {
                    return Err(Error::MalformedCheckpoint(format!("optimizer tensor `{key}` has the wrong shape")));
                }
                *dst = t.clone();
            }
        }
        trainer.adam.t = adam_step;
        trainer.step = step;
        trainer.skipped = skipped;
        Ok(trainer)
    }
}

/// Builds the loss of one batch item; returns (kept pixels, pixels, loss).
#[allow(clippy::too_many_arguments)]
fn item_loss(
    g: &mut Graph<f32>,
    model: &DensityModel<f32>,
    vars: &FieldVars,
    scene: &TrainScene,
    cfg: &TrainConfig,
    weights: &LossWeights,
    ray_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize, crate::autodiff::Var)> {
    let (input_img, input_cam) = scene.input();
    let features = model.features_node(g, vars, input_img)?;
    let (loss_set, render_set) = partition_frames(scene.frames.len(), cfg.partition_prob, rng)?;
    let (w, h) = (input_img.width(), input_img.height());
    let n = cfg.patch_size;
    let patches = sample_patches(&loss_set, cfg.patches, n, w, h, rng)?;

    let mut rays = Vec::with_capacity(patches.len() * n * n);
    let mut target = Vec::with_capacity(patches.len() * 3 * n * n);
    for p in &patches {
        let (img, cam) = &scene.frames[p.frame];
        for row in p.top..p.top + n {
            for col in p.left..p.left + n {
                rays.push(cam.ray_for_pixel(cam.pixel_center(col, row)));
            }
        }
        for ch in 0..3 {
            for row in p.top..p.top + n {
                for col in p.left..p.left + n {
                    target.push(img.texel(row, col)[ch]);
                }
            }
        }
    }
    let target = Tensor::new(&[patches.len(), 3, n, n], target);
    let bundle = RayBundle::stratified(rays, cfg.samples, cfg.z_near, cfg.z_far, ray_seed, 0);
    let frames: Vec<Frame<'_>> = render_set
        .iter()
        .map(|&k| Frame::new(&scene.frames[k].0, &scene.frames[k].1))
        .collect();
    let nodes = render_nodes(g, model, vars, features, input_cam, &bundle, &frames);
    let valid = invalid_ray_mask(&nodes.iv_raw, cfg.tau);
    let pl = patch_loss_node(g, &target, &nodes.colors, nodes.depth, &valid, weights);
    Ok((pl.kept, pl.pixels, pl.total))
}
