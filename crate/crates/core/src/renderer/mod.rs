//! Volume rendering with color sampling.
//!
//! Rays are discretized with stratified samples linear in inverse depth. The
//! field supplies density only; colors come from projecting each sample into
//! posed frames and sampling them bilinearly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{encode_points, DensityModel, FieldVars};
use crate::geometry::{bilinear_sample_into, Border, Camera, ImageGrid, Ray, Vec3};

/// Weight sums below this render as empty (depth 0).
pub const EMPTY_WEIGHT: f64 = 1e-4;

/// Rays per graph when rendering without gradients.
const RENDER_CHUNK: usize = 512;

/// A posed color image that samples can be projected into.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub image: &'a ImageGrid,
    pub camera: &'a Camera,
}

impl<'a> Frame<'a> {
    pub fn new(image: &'a ImageGrid, camera: &'a Camera) -> Self {
        Self { image, camera }
    }
}

/// RNG for ray `index` of a render with `seed`; independent of scheduling.
pub fn ray_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `d_i = 1/((1−s_i)/z_near + s_i/z_far)` with `s_i = (i + r_i)/S`.
pub fn stratified_depths_with(s: usize, z_near: f64, z_far: f64, mut r: impl FnMut(usize) -> f64) -> Vec<f64> {
    assert!(s >= 2, "need at least 2 samples per ray, got {s}");
    (0..s)
        .map(|i| {
            let si = (i as f64 + r(i)) / s as f64;
            1.0 / ((1.0 - si) / z_near + si / z_far)
        })
        .collect()
}

/// Stratified depths with a fresh uniform offset per bin.
pub fn stratified_depths(s: usize, z_near: f64, z_far: f64, rng: &mut impl Rng) -> Vec<f64> {
    stratified_depths_with(s, z_near, z_far, |_| rng.gen::<f64>())
}

/// `δ_i = d_{i+1} − d_i`, last `δ = z_far − d_last`.
pub fn deltas(depths: &[f64], z_far: f64) -> Vec<f64> {
    let mut out: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(&last) = depths.last() {
        out.push((z_far - last).max(0.0));
    }
    out
}

/// α, T and w for one ray from densities and spacings.
#[derive(Debug, Clone, PartialEq)]
pub struct Compositing {
    pub alphas: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn composite_weights(sigmas: &[f64], deltas: &[f64]) -> Compositing {
    assert_eq!(sigmas.len(), deltas.len(), "one spacing per density sample");
    let mut alphas = Vec::with_capacity(sigmas.len());
    let mut transmittance = Vec::with_capacity(sigmas.len());
    let mut weights = Vec::with_capacity(sigmas.len());
    let mut optical = 0.0f64;
    for (&s, &d) in sigmas.iter().zip(deltas) {
        let tau = s * d;
        let a = -(-tau).exp_m1();
        let t = (-optical).exp();
        alphas.push(a);
        transmittance.push(t);
        weights.push(t * a);
        optical += tau;
    }
    Compositing {
        alphas,
        transmittance,
        weights,
    }
}

/// Per-ray discretization with everything the compositing saw.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySample {
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    /// `[S][K]` sampled colors, zero where out of frame k.
    pub colors: Vec<Vec<[f32; 3]>>,
    /// `[S][K]` O_{i,k}.
    pub out_of_frame: Vec<Vec<bool>>,
    /// `[S]` O_{i,I}.
    pub out_of_input: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// ĉ_k per frame.
    pub colors: Vec<[f32; 3]>,
    /// d̂ = Σ w_i d_i, meters along the ray.
    pub depth: f64,
    /// Σ w_i (O_{i,I} ∨ O_{i,k}) per frame.
    pub iv_raw: Vec<f64>,
    pub weight_sum: f64,
}

/// Sample depths for a batch of rays, `[R·S]` row-major.
#[derive(Debug, Clone)]
pub struct RayBundle {
    pub rays: Vec<Ray>,
    pub samples: usize,
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub z_far: f64,
}

impl RayBundle {
    /// Stratified samples; ray `i` uses `ray_rng(seed, first_index + i)`.
    pub fn stratified(rays: Vec<Ray>, samples: usize, z_near: f64, z_far: f64, seed: u64, first_index: u64) -> Self {
        let mut depths = Vec::with_capacity(rays.len() * samples);
        let mut dl = Vec::with_capacity(rays.len() * samples);
        for i in 0..rays.len() {
            let mut rng = ray_rng(seed, first_index + i as u64);
            let d = stratified_depths(samples, z_near, z_far, &mut rng);
            dl.extend(deltas(&d, z_far));
            depths.extend(d);
        }
        Self {
            rays,
            samples,
            depths,
            deltas: dl,
            z_far,
        }
    }

    /// Same depths for every ray.
    pub fn with_depths(rays: Vec<Ray>, depths: &[f64], z_far: f64) -> Self {
        let samples = depths.len();
        assert!(samples >= 1, "need at least one sample per ray");
        let dl = deltas(depths, z_far);
        let n = rays.len();
        Self {
            rays,
            samples,
            depths: depths.repeat(n),
            deltas: dl.repeat(n),
            z_far,
        }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn points(&self) -> Vec<Vec3> {
        let s = self.samples;
        self.depths
            .iter()
            .enumerate()
            .map(|(i, &d)| self.rays[i / s].point_at(d))
            .collect()
    }
}

/// Colors of `points` in `frame`, zero outside it; returns (`[N·3]`, O flags).
pub fn sample_colors(points: &[Vec3], frame: Frame<'_>) -> (Vec<f32>, Vec<bool>) {
    let c = frame.image.channels();
    let mut colors = vec![0.0f32; points.len() * 3];
    let mut out = vec![false; points.len()];
    let mut px = vec![0.0f32; c];
    for (i, &x) in points.iter().enumerate() {
        let p = frame.camera.project(x);
        if !p.in_frustum {
            out[i] = true;
            continue;
        }
        bilinear_sample_into(frame.image, p.u, Border::MarkInvalid, &mut px);
        for ch in 0..3 {
            colors[i * 3 + ch] = px[ch.min(c - 1)];
        }
    }
    (colors, out)
}

/// Graph nodes of a rendered ray batch.
#[derive(Debug, Clone)]
pub struct RenderNodes {
    /// ĉ_k as `[R, 3]`, one per frame.
    pub colors: Vec<Var>,
    /// d̂ as `[R, 1]`.
    pub depth: Var,
    /// w as `[R, S]`.
    pub weights: Var,
    /// σ as `[R, S]`.
    pub sigmas: Var,
    /// IV_raw per frame per ray.
    pub iv_raw: Vec<Vec<f64>>,
    pub weight_sum: Vec<f64>,
}

/// Renders a ray batch into `g`. Gradients flow to the model through density
/// only; sampled colors are constants.
pub fn render_nodes<T: Real>(
    g: &mut Graph<T>,
    model: &DensityModel<T>,
    vars: &FieldVars,
    features: Var,
    input_camera: &Camera,
    bundle: &RayBundle,
    frames: &[Frame<'_>],
) -> RenderNodes {
    let (r, s) = (bundle.len(), bundle.samples);
    let points = bundle.points();
    let enc = encode_points(input_camera, &points, model.config().n_freq);
    let out_input: Vec<bool> = points.iter().map(|&x| !input_camera.project(x).in_frustum).collect();

    let sigma = model.density_node(g, vars, features, &enc);
    let sigma = g.reshape(sigma, &[r, s]);
    let delta = g.constant(Tensor::from_f64(&[r, s], &bundle.deltas));
    let tau = g.mul(sigma, delta);
    let neg_tau = g.neg(tau);
    let survive = g.exp(neg_tau);
    let neg_survive = g.neg(survive);
    let alpha = g.add_scalar(neg_survive, T::one());
    let optical = g.exclusive_cumsum(tau);
    let neg_optical = g.neg(optical);
    let trans = g.exp(neg_optical);
    let weights = g.mul(trans, alpha);

    let w: Vec<f64> = g.value(weights).data().iter().map(|v| v.f64()).collect();
    let weight_sum: Vec<f64> = w.chunks_exact(s).map(|c| c.iter().sum()).collect();

    let mut colors = Vec::with_capacity(frames.len());
    let mut iv_raw = Vec::with_capacity(frames.len());
    for &frame in frames {
        let (cols, out_k) = sample_colors(&points, frame);
        let iv: Vec<f64> = (0..r)
            .map(|ri| {
                (0..s)
                    .filter(|&si| out_input[ri * s + si] || out_k[ri * s + si])
                    .map(|si| w[ri * s + si])
                    .sum()
            })
            .collect();
        iv_raw.push(iv);
        let values = Tensor::new(&[r, s, 3], cols.iter().map(|&v| T::of(v as f64)).collect());
        colors.push(g.weighted_sum(weights, values));
    }
    let depth_values = Tensor::from_f64(&[r, s, 1], &bundle.depths);
    let depth = g.weighted_sum(weights, depth_values);
    RenderNodes {
        colors,
        depth,
        weights,
        sigmas: sigma,
        iv_raw,
        weight_sum,
    }
}

/// Renders rays with the model's cached input; no gradients.
pub fn render_rays<T: Real>(
    model: &DensityModel<T>,
    rays: &[Ray],
    frames: &[Frame<'_>],
    samples: usize,
    seed: u64,
) -> Result<Vec<RenderOutput>> {
    let camera = model.input_camera().ok_or(Error::MissingInput)?.clone();
    let features = model.cached_features().ok_or(Error::MissingInput)?.clone();
    let mut out = Vec::with_capacity(rays.len());
    for (ci, chunk) in rays.chunks(RENDER_CHUNK).enumerate() {
        let bundle = RayBundle::stratified(
            chunk.to_vec(),
            samples,
            camera.z_near(),
            camera.z_far(),
            seed,
            (ci * RENDER_CHUNK) as u64,
        );
        out.extend(render_bundle(model, &camera, &features, &bundle, frames));
    }
    Ok(out)
}

fn render_bundle<T: Real>(
    model: &DensityModel<T>,
    camera: &Camera,
    features: &Tensor<T>,
    bundle: &RayBundle,
    frames: &[Frame<'_>],
) -> Vec<RenderOutput> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let f = g.constant(features.clone());
    let nodes = render_nodes(&mut g, model, &vars, f, camera, bundle, frames);
    let depth = g.value(nodes.depth).data();
    (0..bundle.len())
        .map(|ri| RenderOutput {
            colors: nodes
                .colors
                .iter()
                .map(|&c| {
                    let d = g.value(c).data();
                    [d[ri * 3].f64() as f32, d[ri * 3 + 1].f64() as f32, d[ri * 3 + 2].f64() as f32]
                })
                .collect(),
            depth: depth[ri].f64(),
            iv_raw: nodes.iv_raw.iter().map(|iv| iv[ri]).collect(),
            weight_sum: nodes.weight_sum[ri],
        })
        .collect()
}

/// Renders a single ray with depths drawn from `rng`.
pub fn composite<T: Real>(
    model: &DensityModel<T>,
    ray: &Ray,
    frames: &[Frame<'_>],
    samples: usize,
    rng: &mut impl Rng,
) -> Result<RenderOutput> {
    Ok(sample_ray(model, ray, frames, samples, rng)?.1)
}

/// Like [`composite`], also returning the full discretization.
pub fn sample_ray<T: Real>(
    model: &DensityModel<T>,
    ray: &Ray,
    frames: &[Frame<'_>],
    samples: usize,
    rng: &mut impl Rng,
) -> Result<(RaySample, RenderOutput)> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("rendering needs at least one frame".into()));
    }
    let camera = model.input_camera().ok_or(Error::MissingInput)?;
    let depths = stratified_depths(samples, camera.z_near(), camera.z_far(), rng);
    let points: Vec<Vec3> = depths.iter().map(|&d| ray.point_at(d)).collect();
    let sigmas: Vec<f64> = model.eval_density_batch(&points)?.iter().map(|v| v.f64()).collect();
    let dl = deltas(&depths, camera.z_far());
    let comp = composite_weights(&sigmas, &dl);
    let out_of_input: Vec<bool> = points.iter().map(|&x| !camera.project(x).in_frustum).collect();
    let per_frame: Vec<(Vec<f32>, Vec<bool>)> = frames.iter().map(|&f| sample_colors(&points, f)).collect();
    let colors: Vec<Vec<[f32; 3]>> = (0..samples)
        .map(|i| {
            per_frame
                .iter()
                .map(|(c, _)| [c[i * 3], c[i * 3 + 1], c[i * 3 + 2]])
                .collect()
        })
        .collect();
    let out_of_frame: Vec<Vec<bool>> = (0..samples).map(|i| per_frame.iter().map(|(_, o)| o[i]).collect()).collect();
    let output = RenderOutput {
        colors: (0..frames.len())
            .map(|k| {
                let mut c = [0.0f64; 3];
                for i in 0..samples {
                    for (ch, cv) in c.iter_mut().enumerate() {
                        *cv += comp.weights[i] * colors[i][k][ch] as f64;
                    }
                }
                c.map(|v| v as f32)
            })
            .collect(),
        depth: comp.weights.iter().zip(&depths).map(|(w, d)| w * d).sum(),
        iv_raw: (0..frames.len())
            .map(|k| {
                (0..samples)
                    .filter(|&i| out_of_input[i] || out_of_frame[i][k])
                    .map(|i| comp.weights[i])
                    .sum()
            })
            .collect(),
        weight_sum: comp.weights.iter().sum(),
    };
    Ok((
        RaySample {
            depths,
            deltas: dl,
            sigmas,
            alphas: comp.alphas,
            transmittance: comp.transmittance,
            weights: comp.weights,
            colors,
            out_of_frame,
            out_of_input,
        },
        output,
    ))
}

/// Rays through every pixel center of `camera`, row-major.
pub fn camera_rays(camera: &Camera) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(camera.width() * camera.height());
    for row in 0..camera.height() {
        for col in 0..camera.width() {
            rays.push(camera.ray_for_pixel(camera.pixel_center(col, row)));
        }
    }
    rays
}

/// Expected-depth map seen from `camera`; 0 where the weight sum is below [`EMPTY_WEIGHT`].
pub fn render_depth_map<T: Real>(model: &DensityModel<T>, camera: &Camera, samples: usize, seed: u64) -> Result<ImageGrid> {
    let rays = camera_rays(camera);
    let input = model.input_camera().ok_or(Error::MissingInput)?;
    // Colors are unused here; the input camera's frustum flags are all that matter.
    let blank = ImageGrid::filled(3, 1, 1, 0.0);
    let frame = Frame::new(&blank, input);
    let outs = render_rays(model, &rays, &[frame], samples, seed)?;
    let data = outs
        .iter()
        .map(|o| if o.weight_sum < EMPTY_WEIGHT { 0.0 } else { o.depth as f32 })
        .collect();
    ImageGrid::new(1, camera.height(), camera.width(), data)
}

/// A synthesized view and its per-pixel validity.
#[derive(Debug, Clone)]
pub struct NovelView {
    pub image: ImageGrid,
    /// 1 where IV_raw ≤ τ, else 0.
    pub valid: ImageGrid,
    pub depth: ImageGrid,
}

/// Renders `target` with colors sampled from the input frame only.
pub fn render_novel_view<T: Real>(
    model: &DensityModel<T>,
    input: Frame<'_>,
    target: &Camera,
    samples: usize,
    tau: f64,
    seed: u64,
) -> Result<NovelView> {
    let rays = camera_rays(target);
    let outs = render_rays(model, &rays, &[input], samples, seed)?;
    let (w, h) = (target.width(), target.height());
    let mut color = Vec::with_capacity(w * h * 3);
    let mut valid = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for o in &outs {
        color.extend_from_slice(&o.colors[0]);
        let ok = o.weight_sum >= EMPTY_WEIGHT && o.iv_raw[0] <= tau;
        valid.push(if ok { 1.0 } else { 0.0 });
        depth.push(if o.weight_sum < EMPTY_WEIGHT { 0.0 } else { o.depth as f32 });
    }
    Ok(NovelView {
        image: ImageGrid::from_colors(3, h, w, color)?,
        valid: ImageGrid::new(1, h, w, valid)?,
        depth: ImageGrid::new(1, h, w, depth)?,
    })
}

#[cfg(test)]
mod tests;
