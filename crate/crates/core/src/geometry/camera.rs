use serde::{Deserialize, Serialize};

use super::math::{
    mat3_inverse, mat3_mul, mat3_mul_vec, mat3_transpose, rigid, rigid_inverse, rotation_of, rotation_pitch_down,
    rotation_yaw, transform_point, translation_of, Mat3, Mat4, Vec3, IDENTITY4,
};
use crate::error::{Error, Result};

/// Depths at or below this value count as "behind the camera".
pub const MIN_PROJECT_DEPTH: f64 = 1e-9;

/// Projected coordinates are clamped to this box so degenerate projections stay finite.
const PROJECT_CLAMP: f64 = 1e3;

/// A ray with unit-length direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalized(),
        }
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Normalized pixel coordinate, [-1,1]² inside the image.
    pub u: [f64; 2],
    /// Camera-frame depth (z) in meters.
    pub z: f64,
    pub in_frustum: bool,
}

/// Pinhole camera: world-to-camera pose plus a 3×4 projection into normalized
/// pixel coordinates. Camera frame is +x right, +y down, +z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct Camera {
    pose_world_to_cam: Mat4,
    proj: [[f64; 4]; 3],
    width: usize,
    height: usize,
    z_near: f64,
    z_far: f64,
    // derived
    cam_to_world_rot: Mat3,
    center_world: Vec3,
    proj_inv: Mat3,
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    pose_world_to_cam: Mat4,
    proj: [[f64; 4]; 3],
    width: usize,
    height: usize,
    z_near: f64,
    z_far: f64,
}

impl TryFrom<CameraRepr> for Camera {
    type Error = Error;
    fn try_from(r: CameraRepr) -> Result<Self> {
        Camera::new(r.pose_world_to_cam, r.proj, r.width, r.height, r.z_near, r.z_far)
    }
}

impl From<Camera> for CameraRepr {
    fn from(c: Camera) -> Self {
        CameraRepr {
            pose_world_to_cam: c.pose_world_to_cam,
            proj: c.proj,
            width: c.width,
            height: c.height,
            z_near: c.z_near,
            z_far: c.z_far,
        }
    }
}

impl Camera {
    pub fn new(
        pose_world_to_cam: Mat4,
        proj: [[f64; 4]; 3],
        width: usize,
        height: usize,
        z_near: f64,
        z_far: f64,
    ) -> Result<Self> {
        let bottom = pose_world_to_cam[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidCamera(format!("pose bottom row is {bottom:?}, expected [0, 0, 0, 1]")));
        }
        let rot = rotation_of(&pose_world_to_cam);
        let rrt = mat3_mul(&rot, &mat3_transpose(&rot));
        for (i, row) in rrt.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (v - expected).abs() > 1e-6 {
                    return Err(Error::InvalidCamera("rotation block is not orthonormal".into()));
                }
            }
        }
        if !(z_near > 0.0 && z_far > z_near) {
            return Err(Error::InvalidCamera(format!(
                "need 0 < z_near < z_far, got z_near={z_near}, z_far={z_far}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera(format!("empty resolution {width}x{height}")));
        }
        let k3 = [
            [proj[0][0], proj[0][1], proj[0][2]],
            [proj[1][0], proj[1][1], proj[1][2]],
            [proj[2][0], proj[2][1], proj[2][2]],
        ];
        let proj_inv = mat3_inverse(&k3).ok_or_else(|| Error::InvalidCamera("singular projection matrix".into()))?;
        let k4 = Vec3::new(proj[0][3], proj[1][3], proj[2][3]);
        let center_cam = -mat3_mul_vec(&proj_inv, k4);
        let cam_to_world_rot = mat3_transpose(&rot);
        let center_world = mat3_mul_vec(&cam_to_world_rot, center_cam - translation_of(&pose_world_to_cam));
        Ok(Self {
            pose_world_to_cam,
            proj,
            width,
            height,
            z_near,
            z_far,
            cam_to_world_rot,
            center_world,
            proj_inv,
        })
    }

    /// Camera with identity pose and intrinsics in normalized pixel units.
    #[allow(clippy::too_many_arguments)]
    pub fn pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        z_near: f64,
        z_far: f64,
    ) -> Result<Self> {
        let proj = [[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]];
        Self::new(IDENTITY4, proj, width, height, z_near, z_far)
    }

    /// Same intrinsics, camera placed at `position` (world) looking along
    /// yaw/pitch (radians; yaw towards +x, pitch towards +y).
    pub fn looking_from(&self, position: Vec3, yaw: f64, pitch_down: f64) -> Self {
        let cam_to_world = mat3_mul(&rotation_yaw(yaw), &rotation_pitch_down(pitch_down));
        let world_to_cam = mat3_transpose(&cam_to_world);
        let t = -mat3_mul_vec(&world_to_cam, position);
        self.with_pose(rigid(&world_to_cam, t))
            .expect("rotation built from yaw/pitch is orthonormal")
    }

    pub fn with_pose(&self, pose_world_to_cam: Mat4) -> Result<Self> {
        Self::new(pose_world_to_cam, self.proj, self.width, self.height, self.z_near, self.z_far)
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Self> {
        Self::new(self.pose_world_to_cam, self.proj, width, height, self.z_near, self.z_far)
    }

    pub fn pose_world_to_cam(&self) -> &Mat4 {
        &self.pose_world_to_cam
    }

    pub fn pose_cam_to_world(&self) -> Mat4 {
        rigid_inverse(&self.pose_world_to_cam)
    }

    pub fn proj(&self) -> &[[f64; 4]; 3] {
        &self.proj
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn z_near(&self) -> f64 {
        self.z_near
    }

    pub fn z_far(&self) -> f64 {
        self.z_far
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.center_world
    }

    pub fn world_to_cam(&self, x: Vec3) -> Vec3 {
        transform_point(&self.pose_world_to_cam, x)
    }

    pub fn cam_to_world(&self, p: Vec3) -> Vec3 {
        mat3_mul_vec(&self.cam_to_world_rot, p - translation_of(&self.pose_world_to_cam))
    }

    /// π(x) = K T x with homogeneous division.
    pub fn project(&self, x: Vec3) -> Projection {
        let p = self.world_to_cam(x);
        let k = &self.proj;
        let h0 = k[0][0] * p.x + k[0][1] * p.y + k[0][2] * p.z + k[0][3];
        let h1 = k[1][0] * p.x + k[1][1] * p.y + k[1][2] * p.z + k[1][3];
        let h2 = k[2][0] * p.x + k[2][1] * p.y + k[2][2] * p.z + k[2][3];
        let z = p.z;
        if z <= MIN_PROJECT_DEPTH || h2 <= MIN_PROJECT_DEPTH {
            let w = h2.max(MIN_PROJECT_DEPTH);
            let u = [
                (h0 / w).clamp(-PROJECT_CLAMP, PROJECT_CLAMP),
                (h1 / w).clamp(-PROJECT_CLAMP, PROJECT_CLAMP),
            ];
            return Projection { u, z, in_frustum: false };
        }
        let u = [
            (h0 / h2).clamp(-PROJECT_CLAMP, PROJECT_CLAMP),
            (h1 / h2).clamp(-PROJECT_CLAMP, PROJECT_CLAMP),
        ];
        let in_frustum = z >= self.z_near
            && z <= self.z_far
            && (-1.0..=1.0).contains(&u[0])
            && (-1.0..=1.0).contains(&u[1]);
        Projection { u, z, in_frustum }
    }

    /// Ray from the camera center through normalized pixel coordinate `u`.
    pub fn ray_for_pixel(&self, u: [f64; 2]) -> Ray {
        let dir_cam = mat3_mul_vec(&self.proj_inv, Vec3::new(u[0], u[1], 1.0));
        // Orient the ray towards positive camera depth.
        let dir_cam = if dir_cam.z < 0.0 { -dir_cam } else { dir_cam };
        let direction = mat3_mul_vec(&self.cam_to_world_rot, dir_cam);
        Ray::new(self.center_world, direction)
    }

    /// Normalized coordinate of the center of pixel (`col`, `row`).
    pub fn pixel_center(&self, col: usize, row: usize) -> [f64; 2] {
        pixel_to_normalized(col as f64 + 0.5, row as f64 + 0.5, self.width, self.height)
    }
}

/// Continuous pixel position (0..W, 0..H, texel centers at i+0.5) to normalized [-1,1].
pub fn pixel_to_normalized(px: f64, py: f64, width: usize, height: usize) -> [f64; 2] {
    [2.0 * px / width as f64 - 1.0, 2.0 * py / height as f64 - 1.0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cam() -> Camera {
        Camera::pinhole(1.0, 1.0, 0.0, 0.0, 64, 48, 1.0, 10.0).unwrap()
    }

    #[test]
    fn identity_projection() {
        let p = unit_cam().project(Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(p.u, [0.0, 0.0]);
        assert_eq!(p.z, 2.0);
        assert!(p.in_frustum);
    }

    #[test]
    fn behind_camera_is_outside() {
        let p = unit_cam().project(Vec3::new(0.0, 0.0, -1.0));
        assert!(!p.in_frustum);
        assert!(p.u[0].is_finite() && p.u[1].is_finite());
    }

    #[test]
    fn translated_camera() {
        let cam = unit_cam().looking_from(Vec3::new(1.0, 0.0, 0.0), 0.0, 0.0);
        let p = cam.project(Vec3::new(1.0, 0.0, 2.0));
        assert!(p.u[0].abs() < 1e-12 && p.u[1].abs() < 1e-12);
        assert!((p.z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_center_ray() {
        let r = unit_cam().ray_for_pixel([0.0, 0.0]);
        assert_eq!(r.origin, Vec3::ZERO);
        assert!((r.direction - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn yawed_camera_looks_sideways() {
        let cam = unit_cam().looking_from(Vec3::ZERO, std::f64::consts::FRAC_PI_2, 0.0);
        let r = cam.ray_for_pixel([0.0, 0.0]);
        assert!((r.direction - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn frustum_depth_bounds() {
        let cam = unit_cam();
        assert!(!cam.project(Vec3::new(0.0, 0.0, 0.5)).in_frustum);
        assert!(!cam.project(Vec3::new(0.0, 0.0, 10.5)).in_frustum);
        assert!(!cam.project(Vec3::new(3.0, 0.0, 2.0)).in_frustum);
    }

    #[test]
    fn rejects_invalid_cameras() {
        assert!(Camera::pinhole(1.0, 1.0, 0.0, 0.0, 4, 4, 0.0, 1.0).is_err());
        assert!(Camera::pinhole(1.0, 1.0, 0.0, 0.0, 4, 4, 2.0, 1.0).is_err());
        let mut pose = IDENTITY4;
        pose[0][0] = 2.0;
        let proj = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        assert!(Camera::new(pose, proj, 4, 4, 1.0, 2.0).is_err());
        let mut pose = IDENTITY4;
        pose[3][2] = 0.1;
        assert!(Camera::new(pose, proj, 4, 4, 1.0, 2.0).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let cam = unit_cam().looking_from(Vec3::new(0.5, -0.2, 1.0), 0.4, 0.1);
        let s = serde_json::to_string(&cam).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cam);
        let bad = s.replace("\"z_near\":1.0", "\"z_near\":-1.0");
        assert!(serde_json::from_str::<Camera>(&bad).is_err());
    }
}
