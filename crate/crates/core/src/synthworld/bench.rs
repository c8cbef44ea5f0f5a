use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Albedo, GroundPlane, Primitive, Scene, Shape};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};

/// Number of range scans in a default trajectory.
pub const DEFAULT_SCANS: usize = 20;
/// Forward distance between consecutive scans (m).
pub const SCAN_SPACING: f64 = 0.5;

const WIDTH: usize = 64;
const HEIGHT: usize = 48;
const FX: f64 = 1.2;
const FY: f64 = 1.6;
const Z_NEAR: f64 = 2.0;
const Z_FAR: f64 = 40.0;
const GROUND_Y: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// One textured fronto-parallel plane.
    Plane,
    TwoObjectOcclusion,
    Street,
    Random,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Plane, Profile::TwoObjectOcclusion, Profile::Street, Profile::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Plane => "plane",
            Profile::TwoObjectOcclusion => "two_object_occlusion",
            Profile::Street => "street",
            Profile::Random => "random",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownProfile(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraRole {
    Input,
    /// Horizontal offset of the input camera at the same time step.
    Stereo,
    /// Input camera one step earlier along the trajectory, one meter
    /// behind; its view contains the input frustum beyond the near plane.
    Previous,
    /// Side camera looking across the scene.
    Lateral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    pub role: CameraRole,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub input: Camera,
    pub auxiliary: Vec<RigCamera>,
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        for a in &self.auxiliary {
            if a.camera.z_near() != self.input.z_near() || a.camera.z_far() != self.input.z_far() {
                return Err(Error::InvalidScene(format!(
                    "{:?} camera depth range differs from the input camera",
                    a.role
                )));
            }
        }
        Ok(())
    }

    /// Input camera followed by the auxiliary cameras whose role is listed,
    /// in rig order.
    pub fn select(&self, roles: &[CameraRole]) -> Vec<Camera> {
        std::iter::once(self.input.clone())
            .chain(
                self.auxiliary
                    .iter()
                    .filter(|a| roles.contains(&a.role))
                    .map(|a| a.camera.clone()),
            )
            .collect()
    }

    pub fn all(&self) -> Vec<Camera> {
        std::iter::once(self.input.clone())
            .chain(self.auxiliary.iter().map(|a| a.camera.clone()))
            .collect()
    }

    /// Same poses at another resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            input: self.input.with_resolution(width, height)?,
            auxiliary: self
                .auxiliary
                .iter()
                .map(|a| {
                    Ok(RigCamera {
                        role: a.role,
                        camera: a.camera.with_resolution(width, height)?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

/// Range-sensor pose: position in the world frame, heading about +y
/// (0 looks along +z, positive turns towards +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePose {
    pub position: Vec3,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScene {
    pub seed: u64,
    pub profile: Profile,
    pub scene: Scene,
    pub rig: CameraRig,
    pub trajectory: Vec<VehiclePose>,
}

impl BenchmarkScene {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.rig.validate()?;
        if self.trajectory.iter().any(|p| !p.position.is_finite() || !p.yaw.is_finite()) {
            return Err(Error::InvalidScene("trajectory poses must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s)?;
        b.validate()?;
        Ok(b)
    }
}

/// Deterministic benchmark scene for `profile`.
pub fn make_benchmark_scene(seed: u64, profile: &str) -> Result<BenchmarkScene> {
    let profile: Profile = profile.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (scene, rig) = match profile {
        Profile::Plane => plane(&mut rng),
        Profile::TwoObjectOcclusion => two_objects(&mut rng),
        Profile::Street => street(&mut rng),
        Profile::Random => random(&mut rng),
    };
    let trajectory = (0..DEFAULT_SCANS)
        .map(|i| VehiclePose {
            position: Vec3::new(0.0, 0.0, i as f64 * SCAN_SPACING),
            yaw: 0.0,
        })
        .collect();
    let b = BenchmarkScene {
        seed,
        profile,
        scene,
        rig,
        trajectory,
    };
    b.validate()?;
    Ok(b)
}

fn base_camera() -> Camera {
    Camera::pinhole(FX, FY, 0.0, 0.0, WIDTH, HEIGHT, Z_NEAR, Z_FAR).expect("constant intrinsics are valid")
}

fn yaw_towards(from: Vec3, to: Vec3) -> f64 {
    (to.x - from.x).atan2(to.z - from.z)
}

/// Input at the origin, stereo 0.5 m right, previous one meter behind, and two
/// laterals at (±lx, 0, lz) turned towards `focus`.
fn rig(lx: f64, lz: f64, focus: Vec3) -> CameraRig {
    let base = base_camera();
    let at = |role, p: Vec3, yaw| RigCamera {
        role,
        camera: base.looking_from(p, yaw, 0.0),
    };
    let left = Vec3::new(-lx, 0.0, lz);
    let right = Vec3::new(lx, 0.0, lz);
    CameraRig {
        input: base.clone(),
        auxiliary: vec![
            at(CameraRole::Stereo, Vec3::new(0.5, 0.0, 0.0), 0.0),
            at(CameraRole::Previous, Vec3::new(0.0, 0.0, -1.0), 0.0),
            at(CameraRole::Lateral, left, yaw_towards(left, focus)),
            at(CameraRole::Lateral, right, yaw_towards(right, focus)),
        ],
    }
}

fn texture(rng: &mut ChaCha8Rng, cell: f64) -> Albedo {
    Albedo::RandomCells {
        seed: rng.gen(),
        cell,
        base: [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)],
        spread: 0.25,
    }
}

fn cuboid(lo: Vec3, hi: Vec3, albedo: Albedo) -> Primitive {
    Primitive {
        shape: Shape::Box {
            center: (lo + hi) * 0.5,
            half_extent: (hi - lo) * 0.5,
        },
        albedo,
    }
}

/// Ground, side walls at x = ±7, end walls at z = -8 and z = 28, ceiling at
/// y = -5: every camera ray and every scan ray hits something.
fn enclosure(rng: &mut ChaCha8Rng) -> Scene {
    let (wx, zb, zf, top) = (7.0, -8.0, 28.0, -5.0);
    let mut s = Scene::empty([0.6, 0.7, 0.9]);
    s.ground = Some(GroundPlane {
        y: GROUND_Y,
        albedo: texture(rng, 0.3),
    });
    let t = 0.5;
    s.primitives.extend([
        cuboid(Vec3::new(-wx - t, top, zb), Vec3::new(-wx, GROUND_Y, zf), texture(rng, 1.0)),
        cuboid(Vec3::new(wx, top, zb), Vec3::new(wx + t, GROUND_Y, zf), texture(rng, 1.0)),
        cuboid(Vec3::new(-wx, top, zf), Vec3::new(wx, GROUND_Y, zf + t), texture(rng, 1.5)),
        cuboid(Vec3::new(-wx, top, zb - t), Vec3::new(wx, GROUND_Y, zb), texture(rng, 1.5)),
        cuboid(Vec3::new(-wx, top - t, zb), Vec3::new(wx, top, zf), texture(rng, 1.5)),
    ]);
    s
}

fn plane(rng: &mut ChaCha8Rng) -> (Scene, CameraRig) {
    let mut s = Scene::empty([0.6, 0.7, 0.9]);
    s.primitives.push(cuboid(
        Vec3::new(-60.0, -60.0, 5.0),
        Vec3::new(60.0, 60.0, 6.0),
        texture(rng, 0.35),
    ));
    (s, rig(1.5, 0.0, Vec3::new(0.0, 0.0, 5.0)))
}

fn two_objects(rng: &mut ChaCha8Rng) -> (Scene, CameraRig) {
    let mut s = enclosure(rng);
    let top = -1.5;
    let j = |rng: &mut ChaCha8Rng| rng.gen_range(-0.2..0.2);
    // Object 1 sits right of the vehicle path and hides the space behind it
    // and most of object 2; the path and both laterals see around it.
    let (x1, z1) = (1.8 + j(rng), 7.0 + j(rng));
    s.primitives.push(cuboid(
        Vec3::new(x1 - 1.0, top, z1 - 0.5),
        Vec3::new(x1 + 1.0, GROUND_Y, z1 + 0.5),
        texture(rng, 0.5),
    ));
    let (x2, z2) = (2.4 + j(rng), 19.0 + j(rng));
    s.primitives.push(cuboid(
        Vec3::new(x2 - 0.9, top, z2 - 0.6),
        Vec3::new(x2 + 0.9, GROUND_Y, z2 + 0.6),
        texture(rng, 0.5),
    ));
    (s, rig(4.5, 4.0, Vec3::new(1.8, 0.0, 10.5)))
}

fn overlaps(a: &[(f64, f64, f64, f64)], b: (f64, f64, f64, f64), margin: f64) -> bool {
    a.iter()
        .any(|o| b.0 < o.1 + margin && o.0 < b.1 + margin && b.2 < o.3 + margin && o.2 < b.3 + margin)
}

fn street(rng: &mut ChaCha8Rng) -> (Scene, CameraRig) {
    let mut s = enclosure(rng);
    let n = rng.gen_range(3..=6);
    let mut placed: Vec<(f64, f64, f64, f64)> = Vec::new();
    while placed.len() < n {
        let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        // Inner face next to the road, outer face past the cuboid edge at |x| = 4.
        let inner = rng.gen_range(2.8..3.4);
        let outer = rng.gen_range(4.2..5.0);
        let len = rng.gen_range(1.5..4.5);
        let z0 = rng.gen_range(4.0..18.0 - len);
        let (xa, xb) = if side > 0.0 { (inner, outer) } else { (-outer, -inner) };
        let fp = (xa, xb, z0, z0 + len);
        if overlaps(&placed, fp, 0.5) {
            continue;
        }
        placed.push(fp);
        let top = GROUND_Y - rng.gen_range(2.0..3.5);
        let cell = rng.gen_range(0.2..0.4);
        s.primitives.push(cuboid(
            Vec3::new(xa, top, z0),
            Vec3::new(xb, GROUND_Y, z0 + len),
            texture(rng, cell),
        ));
    }
    (s, rig(3.0, 1.0, Vec3::new(0.0, 0.0, 9.0)))
}

fn random(rng: &mut ChaCha8Rng) -> (Scene, CameraRig) {
    let mut s = enclosure(rng);
    let n = rng.gen_range(3..=6);
    let mut placed: Vec<(f64, f64, f64, f64)> = Vec::new();
    while placed.len() < n {
        let cx = rng.gen_range(-5.0..5.0);
        let cz = rng.gen_range(5.0..18.0);
        let r = rng.gen_range(0.5..1.5);
        let fp = (cx - r, cx + r, cz - r, cz + r);
        // Keep the camera corridor clear.
        if fp.0 < 1.2 && fp.1 > -1.2 && fp.2 < 10.5 || overlaps(&placed, fp, 0.3) {
            continue;
        }
        placed.push(fp);
        let cell = rng.gen_range(0.3..0.8);
        let albedo = texture(rng, cell);
        if rng.gen_bool(0.5) {
            let top = GROUND_Y - rng.gen_range(1.5..3.0);
            s.primitives
                .push(cuboid(Vec3::new(fp.0, top, fp.2), Vec3::new(fp.1, GROUND_Y, fp.3), albedo));
        } else {
            s.primitives.push(Primitive {
                shape: Shape::Sphere {
                    center: Vec3::new(cx, GROUND_Y - r, cz),
                    radius: r,
                },
                albedo,
            });
        }
    }
    (s, rig(3.0, 1.0, Vec3::new(0.0, 0.0, 10.0)))
}
