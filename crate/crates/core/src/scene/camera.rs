use super::{Mat3, Ray, Vec3};
use crate::error::{Error, Result};

/// Rigid transform `x ↦ rotation·x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_row_major(m: &[f64; 16]) -> Self {
        RigidTransform {
            rotation: Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vec3::new(m[3], m[7], m[11]),
        }
    }
}

/// Pinhole camera. Camera frame: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub world_from_camera: RigidTransform,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        world_from_camera: RigidTransform,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        let r = &world_from_camera.rotation;
        let err = (r.transpose() * r - Mat3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::invalid(format!("rotation not orthonormal (error {err:e})")));
        }
        if !world_from_camera.translation.iter().all(|c| c.is_finite()) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_from_camera,
        })
    }

    /// Camera at `eye` looking at `target`, with image "up" as close to `up` as possible.
    /// Intrinsics derive from a vertical field of view with the principal point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: u32, height: u32) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up vector parallel to view direction"))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_columns(&[right, down, forward]);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Camera::new(
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
            RigidTransform {
                rotation,
                translation: eye,
            },
        )
    }

    /// Camera center `p_cam`.
    pub fn center(&self) -> Vec3 {
        self.world_from_camera.translation
    }

    /// Optical axis in world space.
    pub fn forward(&self) -> Vec3 {
        self.world_from_camera.rotation.column(2).into_owned()
    }

    pub fn camera_from_world(&self) -> RigidTransform {
        self.world_from_camera.inverse()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Ray through continuous pixel coordinates `(u, v)`.
    pub fn generate_ray(&self, u: f64, v: f64) -> Result<Ray> {
        if !(u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64) {
            return Err(Error::Range(format!(
                "pixel ({u}, {v}) outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(self.ray_through(u, v))
    }

    /// Ray through the center of integer pixel `(px, py)`.
    pub fn pixel_ray(&self, px: u32, py: u32) -> Ray {
        self.ray_through(px as f64 + 0.5, py as f64 + 0.5)
    }

    fn ray_through(&self, u: f64, v: f64) -> Ray {
        let local = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let dir = (self.world_from_camera.rotation * local).normalize();
        Ray {
            origin: self.center(),
            direction: dir,
        }
    }

    /// Ray from the camera center along a camera-frame direction.
    pub fn ray_from_local_direction(&self, local: &Vec3) -> Ray {
        Ray {
            origin: self.center(),
            direction: (self.world_from_camera.rotation * local).normalize(),
        }
    }

    /// Continuous pixel coordinates of a camera-frame point with `z > 0`.
    pub fn project_local(&self, p: &Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Pixel coordinates and camera depth of a world point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let local = self.camera_from_world().apply(p);
        self.project_local(&local).map(|(u, v)| (u, v, local.z))
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| (x, y)))
    }
}

/// Converts a ray-surface distance to z-depth along the optical axis.
pub fn distance_to_depth(distance: f64, ray: &Ray, camera: &Camera) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {distance}")));
    }
    Ok(distance * ray.direction.dot(&camera.forward()))
}

/// Inverse of [`distance_to_depth`].
pub fn depth_to_distance(depth: f64, ray: &Ray, camera: &Camera) -> Result<f64> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("depth must be positive, got {depth}")));
    }
    let cos = ray.direction.dot(&camera.forward());
    if !(cos > 0.0) {
        return Err(Error::invalid("ray does not point in front of the camera"));
    }
    Ok(depth / cos)
}
