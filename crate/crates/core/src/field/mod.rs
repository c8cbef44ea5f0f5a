//! The density field: pixel-aligned features from the input image, decoded by
//! a small MLP into a non-negative density at any 3D point.
//!
//! Density never depends on view direction and the field predicts no color.

mod checkpoint;
mod extractor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{encoded_width, normalize_inverse_depth, positional_encode_into, Camera, ImageGrid, Vec3};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, TensorEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorMode {
    /// Encoder-decoder CNN over the input image.
    Conv,
    /// A learnable C×H×W grid, independent of the image.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub mode: ExtractorMode,
    /// Feature channels C.
    pub channels: usize,
    pub hidden: usize,
    pub n_freq: usize,
    pub activation: Activation,
    /// Input image resolution the extractor is built for.
    pub width: usize,
    pub height: usize,
    /// Half-width of the uniform init of the direct feature grid.
    #[serde(default = "default_direct_init")]
    pub direct_init: f64,
}

fn default_direct_init() -> f64 {
    0.5
}

impl FieldConfig {
    pub fn new(mode: ExtractorMode, channels: usize, width: usize, height: usize) -> Self {
        Self {
            mode,
            channels,
            hidden: 64,
            n_freq: crate::geometry::DEFAULT_FREQUENCIES,
            activation: Activation::Softplus,
            width,
            height,
            direct_init: default_direct_init(),
        }
    }

    /// Width of the MLP input excluding features: γ(d) and γ(u').
    pub fn encoding_width(&self) -> usize {
        3 * encoded_width(self.n_freq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("feature channels and hidden width must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("field resolution must be nonzero".into()));
        }
        if self.mode == ExtractorMode::Conv && (self.width % 8 != 0 || self.height % 8 != 0) {
            return Err(Error::InvalidConfig(format!(
                "conv extractor needs a resolution divisible by 8, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.direct_init.is_finite() && self.direct_init >= 0.0) {
            return Err(Error::InvalidConfig("direct_init must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Uniform(f64),
    Const(f64),
}

/// Name, shape and initializer of every parameter, in checkpoint order.
pub(crate) fn param_specs(cfg: &FieldConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = extractor::param_specs(cfg);
    let (c, h, e) = (cfg.channels, cfg.hidden, cfg.encoding_width());
    let b1 = (1.0 / (c + e) as f64).sqrt();
    let b2 = (1.0 / h as f64).sqrt();
    specs.push(("mlp.w1_feat".into(), vec![c, h], Init::Uniform(b1)));
    specs.push(("mlp.w1_enc".into(), vec![e, h], Init::Uniform(b1)));
    specs.push(("mlp.b1".into(), vec![h], Init::Uniform(b1)));
    specs.push(("mlp.w2".into(), vec![h, 1], Init::Uniform(b2)));
    specs.push(("mlp.b2".into(), vec![1], Init::Const(-1.0)));
    specs
}

/// Inputs of the MLP for a batch of world points, relative to the input camera.
#[derive(Debug, Clone)]
pub struct PointEncoding {
    /// Feature-sampling coordinates u', clamped to [-1,1]².
    pub coords: Vec<[f64; 2]>,
    /// `[N, 3·(1+2·n_freq)]`: γ(d) then γ(u'₀), γ(u'₁).
    pub enc: Vec<f64>,
}

impl PointEncoding {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Projects points into the input camera and encodes distance and pixel position.
pub fn encode_points(camera: &Camera, points: &[Vec3], n_freq: usize) -> PointEncoding {
    let width = 3 * encoded_width(n_freq);
    let mut coords = Vec::with_capacity(points.len());
    let mut enc = Vec::with_capacity(points.len() * width);
    let center = camera.center();
    for &x in points {
        let p = camera.project(x);
        let u = [p.u[0].clamp(-1.0, 1.0), p.u[1].clamp(-1.0, 1.0)];
        let d = normalize_inverse_depth((x - center).norm(), camera.z_near(), camera.z_far());
        positional_encode_into(&[d, u[0], u[1]], n_freq, &mut enc);
        coords.push(u);
    }
    PointEncoding { coords, enc }
}

/// Parameter handles of one model bound into a graph.
#[derive(Debug, Clone)]
pub struct FieldVars {
    pub params: Vec<Var>,
}

#[derive(Debug, Clone)]
struct InputState<T> {
    camera: Camera,
    features: Tensor<T>,
}

/// Feature extractor + decoder MLP, with the feature map of the current input cached.
#[derive(Debug, Clone)]
pub struct DensityModel<T: Real = f32> {
    config: FieldConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    input: Option<InputState<T>>,
}

/// Points per graph when evaluating density without gradients.
const EVAL_CHUNK: usize = 16384;

impl<T: Real> DensityModel<T> {
    /// Randomly initialized model.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, init) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Uniform(b) if b > 0.0 => (0..n).map(|_| T::of(rng.gen_range(-b..b))).collect(),
                Init::Uniform(_) => vec![T::zero(); n],
                Init::Const(v) => vec![T::of(v); n],
            };
            names.push(name);
            params.push(Tensor::new(&shape, data));
        }
        Ok(Self {
            config,
            names,
            params,
            input: None,
        })
    }

    /// Model with every parameter set to zero.
    pub fn zeroed(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let (names, params) = param_specs(&config)
            .into_iter()
            .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
            .unzip();
        Ok(Self {
            config,
            names,
            params,
            input: None,
        })
    }

    /// Rebuilds a model from named tensors in [`param_specs`] order.
    pub fn from_parts(config: FieldConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in specs.iter().zip(&params) {
            if p.shape() != &shape[..] {
                return Err(Error::InvalidConfig(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            config,
            names: specs.into_iter().map(|s| s.0).collect(),
            params,
            input: None,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Mutable parameters; invalidates the cached feature map.
    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        self.input = None;
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> DensityModel<U> {
        DensityModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            input: self.input.as_ref().map(|s| InputState {
                camera: s.camera.clone(),
                features: s.features.cast(),
            }),
        }
    }

    /// Adds the parameters to `g`, as gradient leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> FieldVars {
        FieldVars {
            params: self.params.iter().map(|p| g.leaf(p.clone(), trainable)).collect(),
        }
    }

    fn check_image(&self, image: &ImageGrid) -> Result<()> {
        if image.channels() != 3 || image.width() != self.config.width || image.height() != self.config.height {
            return Err(Error::InvalidImage(format!(
                "expected a 3x{}x{} input image, got {}x{}x{}",
                self.config.height,
                self.config.width,
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Feature map of `image` as an `[H, W, C]` node.
    pub fn features_node(&self, g: &mut Graph<T>, vars: &FieldVars, image: &ImageGrid) -> Result<Var> {
        self.check_image(image)?;
        Ok(extractor::features(g, &self.config, &vars.params, image))
    }

    /// σ for encoded points, `[N, 1]`.
    pub fn density_node(&self, g: &mut Graph<T>, vars: &FieldVars, features: Var, points: &PointEncoding) -> Var {
        let np = extractor::param_count(&self.config);
        let p = &vars.params[np..];
        let (w1f, w1e, b1, w2, b2) = (p[0], p[1], p[2], p[3], p[4]);
        let n = points.len();
        let feat = g.bilinear_sample(features, &points.coords);
        let enc = g.constant(Tensor::from_f64(&[n, self.config.encoding_width()], &points.enc));
        let h_feat = g.matmul(feat, w1f);
        let h_enc = g.matmul(enc, w1e);
        let h = g.add(h_feat, h_enc);
        let h = g.add_row(h, b1);
        let h = g.relu(h);
        let o = g.matmul(h, w2);
        let o = g.add_row(o, b2);
        match self.config.activation {
            Activation::Softplus => g.softplus(o),
            Activation::Relu => g.relu(o),
        }
    }

    /// Computes and caches the feature map for a new input frame.
    pub fn set_input(&mut self, image: &ImageGrid, camera: &Camera) -> Result<()> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let f = self.features_node(&mut g, &vars, image)?;
        let features = g.value(f).clone();
        self.input = Some(InputState {
            camera: camera.clone(),
            features,
        });
        Ok(())
    }

    pub fn input_camera(&self) -> Option<&Camera> {
        self.input.as_ref().map(|s| &s.camera)
    }

    /// Cached `[H, W, C]` feature map.
    pub fn cached_features(&self) -> Option<&Tensor<T>> {
        self.input.as_ref().map(|s| &s.features)
    }

    pub fn eval_density(&self, x: Vec3) -> Result<f64> {
        Ok(self.eval_density_batch(&[x])?[0].f64())
    }

    /// σ at many points using the cached features; no gradients are recorded.
    pub fn eval_density_batch(&self, points: &[Vec3]) -> Result<Vec<T>> {
        let state = self.input.as_ref().ok_or(Error::MissingInput)?;
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(EVAL_CHUNK) {
            let enc = encode_points(&state.camera, chunk, self.config.n_freq);
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let f = g.constant(state.features.clone());
            let s = self.density_node(&mut g, &vars, f, &enc);
            out.extend_from_slice(g.value(s).data());
        }
        Ok(out)
    }
}

/// Converts an HWC color image into a CHW tensor.
pub fn image_to_chw<T: Real>(image: &ImageGrid, offset: f64, scale: f64) -> Tensor<T> {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let mut data = vec![T::zero(); c * h * w];
    for (i, px) in image.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + i] = T::of((v as f64 - offset) * scale);
        }
    }
    Tensor::new(&[c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, GradcheckOptions};

    fn cam() -> Camera {
        Camera::pinhole(1.2, 1.6, 0.0, 0.0, 16, 8, 1.0, 40.0).unwrap()
    }

    fn image(w: usize, h: usize) -> ImageGrid {
        let data = (0..w * h * 3).map(|i| ((i * 37 % 101) as f32) / 100.0).collect();
        ImageGrid::from_colors(3, h, w, data).unwrap()
    }

    #[test]
    fn zero_mlp_gives_ln2() {
        let cfg = FieldConfig::new(ExtractorMode::Direct, 4, 16, 8);
        let mut m = DensityModel::<f64>::zeroed(cfg).unwrap();
        m.set_input(&image(16, 8), &cam()).unwrap();
        let s = m.eval_density_batch(&[Vec3::new(0.0, 0.0, 3.0), Vec3::new(50.0, -3.0, -2.0)]).unwrap();
        for v in s {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_input_is_an_error() {
        let cfg = FieldConfig::new(ExtractorMode::Direct, 4, 16, 8);
        let m = DensityModel::<f32>::new(cfg, 0).unwrap();
        assert!(matches!(m.eval_density(Vec3::new(0.0, 0.0, 2.0)), Err(Error::MissingInput)));
    }

    #[test]
    fn init_follows_fan_in_and_bias() {
        let cfg = FieldConfig::new(ExtractorMode::Direct, 32, 16, 8);
        let m = DensityModel::<f32>::new(cfg, 3).unwrap();
        let bound = (1.0f32 / (32.0 + 45.0)).sqrt();
        assert!(m.param("mlp.w1_feat").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert_eq!(m.param("mlp.b2").unwrap().data(), &[-1.0]);
        assert_eq!(m.param("mlp.w1_enc").unwrap().shape(), &[45, 64]);
    }

    #[test]
    fn conv_zero_weights_give_zero_features_and_right_shape() {
        let cfg = FieldConfig::new(ExtractorMode::Conv, 8, 24, 16);
        let mut m = DensityModel::<f32>::zeroed(cfg.clone()).unwrap();
        m.set_input(&image(24, 16), &cam()).unwrap();
        let f = m.cached_features().unwrap();
        assert_eq!(f.shape(), &[16, 24, 8]);
        assert!(f.data().iter().all(|&v| v == 0.0));
        let m = DensityModel::<f32>::new(cfg, 1).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let f = m.features_node(&mut g, &vars, &image(24, 16)).unwrap();
        assert_eq!(g.shape(f), &[16, 24, 8]);
    }

    #[test]
    fn conv_rejects_indivisible_resolution() {
        let cfg = FieldConfig::new(ExtractorMode::Conv, 8, 20, 16);
        assert!(DensityModel::<f32>::new(cfg, 0).is_err());
    }

    #[test]
    fn same_pixel_same_distance_same_density() {
        let cfg = FieldConfig::new(ExtractorMode::Direct, 4, 16, 8);
        let mut m = DensityModel::<f64>::new(cfg, 9).unwrap();
        m.set_input(&image(16, 8), &cam()).unwrap();
        let a = Vec3::new(0.3, 0.2, 4.0);
        let b = a;
        let s = m.eval_density_batch(&[a, b]).unwrap();
        assert_eq!(s[0], s[1]);
        assert!(s[0] >= 0.0);
    }

    #[test]
    fn density_gradcheck_through_both_extractors() {
        for mode in [ExtractorMode::Direct, ExtractorMode::Conv] {
            let cfg = FieldConfig {
                hidden: 6,
                n_freq: 2,
                ..FieldConfig::new(mode, 3, 8, 8)
            };
            let m = DensityModel::<f64>::new(cfg, 5).unwrap();
            let c = Camera::pinhole(1.0, 1.0, 0.0, 0.0, 8, 8, 1.0, 20.0).unwrap();
            let pts = [Vec3::new(0.1, -0.2, 2.0), Vec3::new(-0.7, 0.4, 5.5), Vec3::new(3.0, 0.1, 2.0)];
            let enc = encode_points(&c, &pts, 2);
            let img = image(8, 8);
            let opts = GradcheckOptions {
                max_entries: 12,
                ..Default::default()
            };
            let r = gradcheck(m.params(), opts, |g, v| {
                let vars = FieldVars { params: v.to_vec() };
                let f = m.features_node(g, &vars, &img).unwrap();
                let s = m.density_node(g, &vars, f, &enc);
                g.sum(s)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{mode:?}: {r:?}");
        }
    }
}
