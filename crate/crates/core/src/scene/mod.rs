//! Geometric domain types: points, Gaussians, cameras, rays and raylets.

mod camera;
mod gaussian;

pub use camera::{distance_to_depth, depth_to_distance, Camera, RigidTransform};
pub use gaussian::{build_covariance, Gaussian, GaussianSet, Quaternion};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// A half-line with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid("ray direction must be non-zero and finite"));
        }
        Ok(Ray {
            origin,
            direction: direction / norm,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// A unit segment of a query ray, starting near a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Raylet {
    pub start: Vec3,
    pub direction: Vec3,
    /// Distance from the parent ray origin to `start`.
    pub t_start: f64,
    /// Ball or Gaussian that produced this raylet.
    pub source_index: usize,
}

impl Raylet {
    pub fn on_ray(ray: &Ray, t: f64, source_index: usize) -> Self {
        Raylet {
            start: ray.at(t),
            direction: ray.direction,
            t_start: t,
            source_index,
        }
    }

    /// Origin of the parent ray.
    pub fn parent_origin(&self) -> Vec3 {
        self.start - self.direction * self.t_start
    }
}

/// Named per-point scalar channels stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Attributes {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl Attributes {
    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let w = self.width();
        let c = self.names.iter().position(|n| n == name)?;
        Some(self.values.chunks(w).map(|r| r[c]).collect())
    }

    fn select_rows(&self, keep: &[usize]) -> Attributes {
        let mut values = Vec::with_capacity(keep.len() * self.width());
        for &i in keep {
            values.extend_from_slice(self.row(i));
        }
        Attributes {
            names: self.names.clone(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub attributes: Option<Attributes>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Self {
        PointCloud {
            positions,
            attributes: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Removes exact duplicate positions, keeping the first occurrence.
    /// Returns the number of points dropped.
    pub fn dedup(&mut self) -> usize {
        let mut seen = std::collections::HashSet::with_capacity(self.positions.len());
        let keep: Vec<usize> = (0..self.positions.len())
            .filter(|&i| {
                let p = self.positions[i];
                seen.insert([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
            })
            .collect();
        let dropped = self.positions.len() - keep.len();
        if dropped > 0 {
            log::warn!("dropping {dropped} duplicate points before radius computation");
            self.positions = keep.iter().map(|&i| self.positions[i]).collect();
            if let Some(a) = &self.attributes {
                self.attributes = Some(a.select_rows(&keep));
            }
        }
        dropped
    }
}

/// Volumetric scene input: a raw point cloud or a set of 3D Gaussians.
#[derive(Debug, Clone)]
pub enum SceneInput {
    Points(PointCloud),
    Gaussians(GaussianSet),
}

impl SceneInput {
    /// Point positions or Gaussian means.
    pub fn positions(&self) -> Vec<Vec3> {
        match self {
            SceneInput::Points(c) => c.positions.clone(),
            SceneInput::Gaussians(g) => g.gaussians.iter().map(|g| g.mean).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SceneInput::Points(c) => c.len(),
            SceneInput::Gaussians(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
