//! Synthetic static scenes with analytic oracles: ray hits, ground-truth
//! renders, point occupancy and horizontal range scans.
//!
//! World frame matches the input camera: +x right, +y down, +z forward. The
//! ground is the half-space `y ≥ y_ground`.

mod albedo;
mod bench;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, ImageGrid, Ray, Vec3};

pub use albedo::Albedo;
pub use bench::{
    make_benchmark_scene, BenchmarkScene, CameraRig, CameraRole, Profile, RigCamera, VehiclePose, DEFAULT_SCANS,
    SCAN_SPACING,
};

/// Hits closer than this are ignored.
const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned box.
    Box { center: Vec3, half_extent: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Albedo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub y: f64,
    pub albedo: Albedo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub ground: Option<GroundPlane>,
    pub background: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub albedo: [f32; 3],
    pub normal: Vec3,
}

impl Shape {
    /// Nearest `t > HIT_EPS` and the outward normal there.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Box { center, half_extent } => {
                let lo = center - half_extent;
                let hi = center + half_extent;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = (Vec3::default(), Vec3::default());
                for a in 0..3 {
                    let (o, d) = (ray.origin[a], ray.direction[a]);
                    if d.abs() < 1e-300 {
                        if o < lo[a] || o > hi[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
                    let mut na = axis(a, -1.0);
                    let mut nb = axis(a, 1.0);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        std::mem::swap(&mut na, &mut nb);
                    }
                    if ta > t0 {
                        t0 = ta;
                        n0 = na;
                    }
                    if tb < t1 {
                        t1 = tb;
                        n1 = nb;
                    }
                }
                if t0 > t1 {
                    None
                } else if t0 > HIT_EPS {
                    Some((t0, n0))
                } else if t1 > HIT_EPS {
                    Some((t1, n1))
                } else {
                    None
                }
            }
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(ray.direction);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if -b - s > HIT_EPS { -b - s } else { -b + s };
                (t > HIT_EPS).then(|| (t, (ray.point_at(t) - center).normalized()))
            }
        }
    }

    /// Closed-set membership.
    pub fn contains(&self, x: Vec3) -> bool {
        match *self {
            Shape::Box { center, half_extent } => {
                let d = x - center;
                d.x.abs() <= half_extent.x && d.y.abs() <= half_extent.y && d.z.abs() <= half_extent.z
            }
            Shape::Sphere { center, radius } => (x - center).norm() <= radius,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Box { center, half_extent } => {
                center.is_finite() && half_extent.x > 0.0 && half_extent.y > 0.0 && half_extent.z > 0.0
            }
            Shape::Sphere { center, radius } => center.is_finite() && radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!("primitive {self:?} needs positive extents")))
        }
    }
}

fn axis(a: usize, s: f64) -> Vec3 {
    let mut v = [0.0; 3];
    v[a] = s;
    Vec3::from_array(v)
}

impl Scene {
    pub fn empty(background: [f32; 3]) -> Self {
        Self {
            primitives: Vec::new(),
            ground: None,
            background,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.shape.validate()?;
            p.albedo.validate()?;
        }
        if let Some(g) = &self.ground {
            g.albedo.validate()?;
            if !g.y.is_finite() {
                return Err(Error::InvalidScene("ground height must be finite".into()));
            }
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidScene("background color must lie in [0,1]".into()));
        }
        Ok(())
    }

    /// Nearest hit along `ray`, if any.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<(f64, Vec3, &Albedo)> = None;
        for p in &self.primitives {
            if let Some((t, n)) = p.shape.intersect(ray) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, n, &p.albedo));
                }
            }
        }
        if let Some(g) = &self.ground {
            let dy = ray.direction.y;
            if dy.abs() > 1e-300 {
                let t = (g.y - ray.origin.y) / dy;
                if t > HIT_EPS && best.is_none_or(|b| t < b.0) {
                    best = Some((t, Vec3::new(0.0, -1.0, 0.0), &g.albedo));
                }
            }
        }
        best.map(|(t, n, a)| Hit {
            distance: t,
            albedo: a.eval(ray.point_at(t), n),
            normal: n,
        })
    }

    /// Closed primitives and the ground half-space count as occupied.
    pub fn occupied(&self, x: Vec3) -> bool {
        self.ground.as_ref().is_some_and(|g| x.y >= g.y) || self.primitives.iter().any(|p| p.shape.contains(x))
    }

    /// Color and depth images seen by `camera` at its resolution. Depth is the
    /// hit distance along the pixel-center ray, 0 on misses; color averages
    /// `supersample²` rays per pixel.
    pub fn render_gt_with(&self, camera: &Camera, supersample: usize) -> (ImageGrid, ImageGrid) {
        let (w, h) = (camera.width(), camera.height());
        let ss = supersample.max(1);
        let mut color = Vec::with_capacity(w * h * 3);
        let mut depth = Vec::with_capacity(w * h);
        for row in 0..h {
            for col in 0..w {
                let center = camera.ray_for_pixel(camera.pixel_center(col, row));
                depth.push(self.intersect(&center).map_or(0.0, |hit| hit.distance as f32));
                let mut acc = [0.0f64; 3];
                for sy in 0..ss {
                    for sx in 0..ss {
                        let px = col as f64 + (sx as f64 + 0.5) / ss as f64;
                        let py = row as f64 + (sy as f64 + 0.5) / ss as f64;
                        let u = crate::geometry::pixel_to_normalized(px, py, w, h);
                        let c = self.intersect(&camera.ray_for_pixel(u)).map_or(self.background, |hit| hit.albedo);
                        for (a, v) in acc.iter_mut().zip(c) {
                            *a += v as f64;
                        }
                    }
                }
                let n = (ss * ss) as f64;
                color.extend(acc.iter().map(|a| (a / n) as f32));
            }
        }
        (
            ImageGrid::from_colors(3, h, w, color).expect("sized by construction"),
            ImageGrid::new(1, h, w, depth).expect("sized by construction"),
        )
    }

    /// Ground-truth render with 2×2 color supersampling.
    pub fn render_gt(&self, camera: &Camera) -> (ImageGrid, ImageGrid) {
        self.render_gt_with(camera, 2)
    }

    /// Horizontal range scan from `pose`: `n_rays` rays evenly spread over
    /// 360° of azimuth, heights spread over `y_slice` (relative to the pose).
    /// Returns world-frame hit points; misses are dropped.
    pub fn simulate_scan(&self, pose: &VehiclePose, n_rays: usize, y_slice: [f64; 2]) -> Vec<Vec3> {
        // Golden-ratio sequence spreads heights evenly and deterministically.
        const PHI: f64 = 0.618_033_988_749_894_9;
        let mut points = Vec::with_capacity(n_rays);
        for j in 0..n_rays {
            let azimuth = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n_rays as f64;
            let frac = (j as f64 * PHI).fract();
            let y = y_slice[0] + frac * (y_slice[1] - y_slice[0]);
            let origin = pose.position + Vec3::new(0.0, y, 0.0);
            let heading = pose.yaw + azimuth;
            let ray = Ray::new(origin, Vec3::new(heading.sin(), 0.0, heading.cos()));
            if let Some(hit) = self.intersect(&ray) {
                points.push(ray.point_at(hit.distance));
            }
        }
        points
    }
}

/// `intersect` as a free function: (hit, distance, albedo).
pub fn intersect(scene: &Scene, ray: &Ray) -> (bool, f64, [f32; 3]) {
    match scene.intersect(ray) {
        Some(h) => (true, h.distance, h.albedo),
        None => (false, 0.0, scene.background),
    }
}

pub fn occupancy_oracle(scene: &Scene, x: Vec3) -> bool {
    scene.occupied(x)
}
