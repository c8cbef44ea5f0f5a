//! Metrics: carved occupancy (O_acc, IE_acc, IE_rec), depth metrics, PSNR and
//! SSIM, and top-down density slices.

mod carving;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::field::DensityModel;
use crate::geometry::{Camera, ImageGrid, Vec3};
use crate::renderer::{render_depth_map, render_novel_view, render_rays, Frame, EMPTY_WEIGHT};
use crate::synthworld::{Scene, VehiclePose};

pub use carving::{build_carved, CarvedOccupancy, ScanBins, DEFAULT_BINS};
pub use metrics::{
    depth_metrics, depth_metrics_masked, psnr, psnr_masked, ssim_global, ssim_masked, DepthMetrics, MAX_EVAL_DEPTH,
    MIN_PRED_DEPTH, PSNR_CAP,
};

/// σ above this counts as occupied.
pub const OCCUPIED_SIGMA: f64 = 0.5;
/// Rays per scan used when carving benchmark scenes.
pub const DEFAULT_SCAN_RAYS: usize = 3600;

/// Anything that assigns a density to world points.
pub trait DensityFn {
    fn densities(&self, points: &[Vec3]) -> Result<Vec<f64>>;
}

impl<T: Real> DensityFn for DensityModel<T> {
    fn densities(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        Ok(self.eval_density_batch(points)?.iter().map(|v| v.f64()).collect())
    }
}

/// Ground-truth density: `sigma` inside geometry, 0 elsewhere.
#[derive(Debug, Clone, Copy)]
pub struct OracleDensity<'a> {
    pub scene: &'a Scene,
    pub sigma: f64,
}

impl<'a> OracleDensity<'a> {
    pub fn new(scene: &'a Scene) -> Self {
        Self { scene, sigma: 1e3 }
    }
}

impl DensityFn for OracleDensity<'_> {
    fn densities(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|&x| if self.scene.occupied(x) { self.sigma } else { 0.0 })
            .collect())
    }
}

/// Baseline that marks everything behind the model's rendered depth as
/// occupied (up to `margin` meters behind it, when given). Points are looked
/// up along the input-camera ray through their (clamped) projection.
pub struct DepthCarve<'a, T: Real> {
    pub model: &'a DensityModel<T>,
    pub samples: usize,
    pub seed: u64,
    pub margin: Option<f64>,
}

impl<T: Real> DensityFn for DepthCarve<'_, T> {
    fn densities(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        let cam = self.model.input_camera().ok_or(Error::MissingInput)?;
        let rays: Vec<_> = points
            .iter()
            .map(|&x| {
                let u = cam.project(x).u.map(|v| v.clamp(-1.0, 1.0));
                cam.ray_for_pixel(u)
            })
            .collect();
        let outs = render_rays(self.model, &rays, &[], self.samples, self.seed)?;
        Ok(points
            .iter()
            .zip(&outs)
            .map(|(&x, o)| {
                if o.weight_sum < EMPTY_WEIGHT {
                    return 0.0;
                }
                let dist = (x - cam.center()).norm();
                let behind = dist >= o.depth && self.margin.is_none_or(|m| dist <= o.depth + m);
                if behind {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Evenly spaced evaluation points (cell centers of a regular grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCuboid {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub counts: [usize; 3],
}

impl Default for EvalCuboid {
    /// 16 × 5 × 34 = 2720 points over x ∈ [-4,4], y ∈ [0,1] (below the
    /// camera), z ∈ [3,20].
    fn default() -> Self {
        Self {
            x: [-4.0, 4.0],
            y: [0.0, 1.0],
            z: [3.0, 20.0],
            counts: [16, 5, 34],
        }
    }
}

impl EvalCuboid {
    pub fn points(&self) -> Vec<Vec3> {
        let [nx, ny, nz] = self.counts;
        let at = |r: [f64; 2], i: usize, n: usize| r[0] + (r[1] - r[0]) * (i as f64 + 0.5) / n as f64;
        let mut pts = Vec::with_capacity(nx * ny * nz);
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    pts.push(Vec3::new(at(self.x, i, nx), at(self.y, j, ny), at(self.z, k, nz)));
                }
            }
        }
        pts
    }
}

/// Per-point occupancy and visibility labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyLabels {
    pub occ: Vec<bool>,
    pub vis: Vec<bool>,
}

impl OccupancyLabels {
    /// Both labels from carving.
    pub fn carved(carved: &CarvedOccupancy, points: &[Vec3]) -> Self {
        Self {
            occ: points.iter().map(|&x| carved.occ(x)).collect(),
            vis: points.iter().map(|&x| carved.vis(x)).collect(),
        }
    }

    /// Occupancy from the scene oracle, visibility from the first scan.
    pub fn oracle(scene: &Scene, carved: &CarvedOccupancy, points: &[Vec3]) -> Self {
        Self {
            occ: points.iter().map(|&x| scene.occupied(x)).collect(),
            vis: points.iter().map(|&x| carved.vis(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub o_acc: Option<f64>,
    pub ie_acc: Option<f64>,
    pub ie_rec: Option<f64>,
    pub n_points: usize,
    pub n_invisible: usize,
    pub n_invisible_empty: usize,
}

/// Scores densities against labels: occupied iff σ > 0.5; IE_rec counts
/// invisible-and-empty points with σ < 0.5.
pub fn occupancy_report(labels: &OccupancyLabels, sigma: &[f64]) -> Result<OccupancyReport> {
    let n = labels.occ.len();
    if labels.vis.len() != n || sigma.len() != n {
        return Err(Error::InvalidConfig(format!(
            "label and density counts differ: {n}, {}, {}",
            labels.vis.len(),
            sigma.len()
        )));
    }
    let pred: Vec<bool> = sigma.iter().map(|&s| s > OCCUPIED_SIGMA).collect();
    let frac = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let correct = (0..n).filter(|&i| pred[i] == labels.occ[i]).count();
    let invisible: Vec<usize> = (0..n).filter(|&i| !labels.vis[i]).collect();
    let ie_correct = invisible.iter().filter(|&&i| pred[i] == labels.occ[i]).count();
    let ie: Vec<usize> = invisible.iter().copied().filter(|&i| !labels.occ[i]).collect();
    let ie_free = ie.iter().filter(|&&i| sigma[i] < OCCUPIED_SIGMA).count();
    Ok(OccupancyReport {
        o_acc: frac(correct, n),
        ie_acc: frac(ie_correct, invisible.len()),
        ie_rec: frac(ie_free, ie.len()),
        n_points: n,
        n_invisible: invisible.len(),
        n_invisible_empty: ie.len(),
    })
}

/// Evaluates `density` on `points` and scores it.
pub fn occupancy_metrics(density: &dyn DensityFn, labels: &OccupancyLabels, points: &[Vec3]) -> Result<OccupancyReport> {
    occupancy_report(labels, &density.densities(points)?)
}

/// Simulates one scan per trajectory pose and carves the slice.
pub fn carve_scene(scene: &Scene, trajectory: &[VehiclePose], rays: usize, y_range: [f64; 2], bins: usize) -> CarvedOccupancy {
    let scans: Vec<(VehiclePose, Vec<Vec3>)> = trajectory
        .iter()
        .map(|p| (*p, scene.simulate_scan(p, rays, y_range)))
        .collect();
    build_carved(&scans, y_range[0], y_range[1], bins)
}

/// Depth metrics of the model's rendered depth from `camera` against an
/// analytic depth map.
pub fn evaluate_depth<T: Real>(
    model: &DensityModel<T>,
    camera: &Camera,
    gt_depth: &ImageGrid,
    samples: usize,
    seed: u64,
    max_depth: f64,
) -> Result<DepthMetrics> {
    let pred = render_depth_map(model, camera, samples, seed)?;
    depth_metrics(&pred, gt_depth, max_depth)
}

/// Quality of one synthesized view, over the pixels the renderer marks valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub psnr: f64,
    pub ssim: f64,
    pub valid_fraction: f64,
}

/// Synthesizes every target view from `input` alone and scores it against
/// its reference image.
pub fn nvs_scores<T: Real>(
    model: &DensityModel<T>,
    input: Frame<'_>,
    targets: &[(&ImageGrid, &Camera)],
    samples: usize,
    tau: f64,
    seed: u64,
) -> Result<Vec<ViewScore>> {
    targets
        .iter()
        .map(|&(reference, camera)| {
            let view = render_novel_view(model, input, camera, samples, tau, seed)?;
            let valid = &view.valid;
            let n = valid.data().len().max(1);
            Ok(ViewScore {
                psnr: psnr_masked(&view.image, reference, Some(valid))?,
                ssim: ssim_masked(&view.image, reference, Some(valid))?,
                valid_fraction: valid.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64,
            })
        })
        .collect()
}

/// Top-down slice: the maximum σ over `y_samples` heights per (x, z) cell,
/// shown as `1 - exp(-σ)` (or 0/1 above `threshold`). Row 0 is the far end.
pub fn export_density_slice(
    density: &dyn DensityFn,
    x_range: [f64; 2],
    z_range: [f64; 2],
    y_range: [f64; 2],
    res: [usize; 2],
    y_samples: usize,
    threshold: Option<f64>,
) -> Result<ImageGrid> {
    let [nx, nz] = res;
    if nx == 0 || nz == 0 || y_samples == 0 {
        return Err(Error::InvalidConfig("slice resolution must be positive".into()));
    }
    let at = |r: [f64; 2], i: usize, n: usize| r[0] + (r[1] - r[0]) * (i as f64 + 0.5) / n as f64;
    let mut pts = Vec::with_capacity(nx * nz * y_samples);
    for row in 0..nz {
        let z = at(z_range, nz - 1 - row, nz);
        for col in 0..nx {
            let x = at(x_range, col, nx);
            for k in 0..y_samples {
                pts.push(Vec3::new(x, at(y_range, k, y_samples), z));
            }
        }
    }
    let sigma = density.densities(&pts)?;
    let data = sigma
        .chunks_exact(y_samples)
        .map(|c| {
            let m = c.iter().cloned().fold(0.0f64, f64::max);
            match threshold {
                Some(t) => (m > t) as u8 as f32,
                None => (1.0 - (-m).exp()) as f32,
            }
        })
        .collect();
    ImageGrid::new(1, nz, nx, data)
}

#[cfg(test)]
mod tests;
