//! Shared fixtures for the criterion benches in `benches/`.

use densefield::field::{DensityModel, ExtractorMode};
use densefield::geometry::{ImageGrid, Ray, Vec3};
use densefield::renderer::camera_rays;
use densefield::synthworld::{make_benchmark_scene, BenchmarkScene, CameraRole};
use densefield::trainer::{TrainConfig, TrainScene, Trainer};

/// Deterministic values in [0, 1).
pub fn ramp(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 * 0.618_033_988 + phase).sin() * 0.5 + 0.5).min(0.999)).collect()
}

pub fn ramp_image(channels: usize, height: usize, width: usize, phase: f64) -> ImageGrid {
    let data = ramp(channels * height * width, phase).into_iter().map(|v| v as f32).collect();
    ImageGrid::new(channels, height, width, data).expect("valid shape")
}

pub struct PlaneFixture {
    pub bench: BenchmarkScene,
    pub scene: TrainScene,
    pub config: TrainConfig,
}

/// The plane benchmark with every auxiliary view, at desk resolution.
pub fn plane_fixture(mode: ExtractorMode) -> PlaneFixture {
    let bench = make_benchmark_scene(0, "plane").expect("known profile");
    let scene = TrainScene::from_benchmark(&bench, &[CameraRole::Stereo, CameraRole::Previous, CameraRole::Lateral])
        .expect("valid rig");
    let config = TrainConfig {
        mode,
        batch_size: 1,
        ..TrainConfig::desk()
    };
    PlaneFixture { bench, scene, config }
}

impl PlaneFixture {
    pub fn trainer(&self) -> Trainer {
        let cam = &self.bench.rig.input;
        Trainer::new(self.config.clone(), cam.width(), cam.height()).expect("valid config")
    }

    /// A freshly initialized model conditioned on the input view.
    pub fn model(&self) -> DensityModel<f32> {
        let mut t = self.trainer();
        t.prepare_eval(&self.scene).expect("matching scene");
        t.model
    }

    pub fn input_rays(&self, n: usize) -> Vec<Ray> {
        camera_rays(&self.bench.rig.input).into_iter().take(n).collect()
    }

    pub fn cuboid_points(&self, n: usize) -> Vec<Vec3> {
        let r = ramp(3 * n, 1.0);
        r.chunks_exact(3)
            .map(|c| Vec3::new(8.0 * c[0] - 4.0, c[1], 3.0 + 17.0 * c[2]))
            .collect()
    }
}
