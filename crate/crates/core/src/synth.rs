//! Analytic scenes with exact ray-surface distances, used as ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RayletField;
use crate::render::DepthMap;
use crate::scene::{Camera, Gaussian, GaussianSet, PointCloud, Ray, Raylet, Vec3};
use crate::spatial::UniformGrid;

/// Roots closer than this are treated as the ray origin itself.
const MIN_HIT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Primitive {
    /// Infinite plane for ray casting; points are sampled from the square of
    /// half-size `extent` centered at `point`.
    Plane { point: [f64; 3], normal: [f64; 3], extent: f64 },
    Sphere { center: [f64; 3], radius: f64 },
    /// Inside surface of an axis-aligned box.
    BoxInterior { min: [f64; 3], max: [f64; 3] },
}

fn v(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Orthonormal tangent pair for a unit normal.
fn tangents(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&helper).normalize();
    (a, n.cross(&a))
}

impl Primitive {
    /// Smallest ray parameter `t > 0` at which the ray meets the surface.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        match *self {
            Primitive::Plane { point, normal, .. } => {
                let n = v(normal).normalize();
                let denom = n.dot(&ray.direction);
                if denom == 0.0 {
                    return None;
                }
                let t = n.dot(&(v(point) - ray.origin)) / denom;
                (t > MIN_HIT).then_some(t)
            }
            Primitive::Sphere { center, radius } => {
                let oc = ray.origin - v(center);
                let b = oc.dot(&ray.direction);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Stable root pair: q carries the sign of -b.
                let q = if b > 0.0 { -b - sq } else { -b + sq };
                let (mut t0, mut t1) = if q != 0.0 { (q, c / q) } else { (0.0, 0.0) };
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > MIN_HIT {
                    Some(t0)
                } else if t1 > MIN_HIT {
                    Some(t1)
                } else {
                    None
                }
            }
            Primitive::BoxInterior { min, max } => {
                let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    let d = ray.direction[a];
                    if d == 0.0 {
                        if ray.origin[a] < min[a] || ray.origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (min[a] - ray.origin[a]) / d;
                    let t1 = (max[a] - ray.origin[a]) / d;
                    near = near.max(t0.min(t1));
                    far = far.min(t0.max(t1));
                }
                if near > far {
                    return None;
                }
                if near > MIN_HIT {
                    Some(near)
                } else if far > MIN_HIT {
                    Some(far)
                } else {
                    None
                }
            }
        }
    }

    /// Unsigned distance of `p` from the surface (0 on the surface).
    pub fn residual(&self, p: &Vec3) -> f64 {
        match *self {
            Primitive::Plane { point, normal, .. } => v(normal).normalize().dot(&(p - v(point))).abs(),
            Primitive::Sphere { center, radius } => ((p - v(center)).norm() - radius).abs(),
            Primitive::BoxInterior { min, max } => {
                let (lo, hi) = (v(min), v(max));
                let inside = (0..3).all(|a| p[a] >= lo[a] - 1e-9 && p[a] <= hi[a] + 1e-9);
                let face = (0..3).map(|a| (p[a] - lo[a]).abs().min((p[a] - hi[a]).abs())).fold(f64::INFINITY, f64::min);
                if inside {
                    face
                } else {
                    let outside = (0..3).map(|a| (lo[a] - p[a]).max(p[a] - hi[a]).max(0.0)).fold(0.0, f64::max);
                    outside.max(face)
                }
            }
        }
    }

    /// Unit surface normal at a point on (or near) the surface.
    pub fn normal_at(&self, p: &Vec3) -> Vec3 {
        match *self {
            Primitive::Plane { normal, .. } => v(normal).normalize(),
            Primitive::Sphere { center, .. } => (p - v(center)).normalize(),
            Primitive::BoxInterior { min, max } => {
                let mut best = (f64::INFINITY, Vec3::x());
                for a in 0..3 {
                    let mut e = Vec3::zeros();
                    e[a] = 1.0;
                    for (dist, n) in [((p[a] - min[a]).abs(), e), ((p[a] - max[a]).abs(), -e)] {
                        if dist < best.0 {
                            best = (dist, n);
                        }
                    }
                }
                best.1
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Plane { extent, .. } => 4.0 * extent * extent,
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::BoxInterior { min, max } => {
                let (a, b, c) = (max[0] - min[0], max[1] - min[1], max[2] - min[2]);
                2.0 * (a * b + b * c + c * a)
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        match *self {
            Primitive::Plane { point, normal, extent } => {
                let (a, b) = tangents(&v(normal).normalize());
                v(point) + a * rng.gen_range(-extent..=extent) + b * rng.gen_range(-extent..=extent)
            }
            Primitive::Sphere { center, radius } => {
                let z: f64 = rng.gen_range(-1.0..=1.0);
                let phi: f64 = rng.gen_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).max(0.0).sqrt();
                v(center) + Vec3::new(r * phi.cos(), r * phi.sin(), z) * radius
            }
            Primitive::BoxInterior { min, max } => {
                let size = v(max) - v(min);
                let faces = [size.y * size.z, size.x * size.z, size.x * size.y];
                let total = 2.0 * (faces[0] + faces[1] + faces[2]);
                let mut pick = rng.gen_range(0.0..total);
                let mut axis = 2;
                let mut upper = false;
                'outer: for a in 0..3 {
                    for side in [false, true] {
                        if pick < faces[a] {
                            axis = a;
                            upper = side;
                            break 'outer;
                        }
                        pick -= faces[a];
                    }
                }
                let mut p = Vec3::zeros();
                for a in 0..3 {
                    p[a] = if a == axis {
                        if upper {
                            max[a]
                        } else {
                            min[a]
                        }
                    } else {
                        rng.gen_range(min[a]..=max[a])
                    };
                }
                p
            }
        }
    }
}

/// A set of analytic surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
}

/// A first hit: ray parameter and the primitive that was hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub primitive: usize,
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::Empty("analytic scene"));
        }
        Ok(AnalyticScene { primitives })
    }

    /// Plane `z = height` sampled over `[-extent, extent]²`.
    pub fn plane(height: f64, extent: f64) -> Self {
        AnalyticScene {
            primitives: vec![Primitive::Plane {
                point: [0.0, 0.0, height],
                normal: [0.0, 0.0, 1.0],
                extent,
            }],
        }
    }

    pub fn sphere(center: Vec3, radius: f64) -> Self {
        AnalyticScene {
            primitives: vec![Primitive::Sphere {
                center: center.into(),
                radius,
            }],
        }
    }

    pub fn box_room(min: Vec3, max: Vec3) -> Self {
        AnalyticScene {
            primitives: vec![Primitive::BoxInterior {
                min: min.into(),
                max: max.into(),
            }],
        }
    }

    /// A sphere of radius 0.5 at the origin inside a 4 × 4 × 3 room.
    pub fn sphere_in_box() -> Self {
        AnalyticScene {
            primitives: vec![
                Primitive::Sphere {
                    center: [0.0, 0.0, 0.0],
                    radius: 0.5,
                },
                Primitive::BoxInterior {
                    min: [-2.0, -2.0, -1.5],
                    max: [2.0, 2.0, 1.5],
                },
            ],
        }
    }

    /// Nearest positive hit over all primitives.
    pub fn first_hit(&self, ray: &Ray) -> Option<Hit> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(ray).map(|t| Hit { distance: t, primitive: i }))
            .min_by(|a, b| a.distance.total_cmp(&b.distance).then(a.primitive.cmp(&b.primitive)))
    }

    pub fn exact_ray_distance(&self, ray: &Ray) -> Option<f64> {
        self.first_hit(ray).map(|h| h.distance)
    }

    /// Smallest residual over all primitives.
    pub fn residual(&self, p: &Vec3) -> f64 {
        self.primitives.iter().map(|s| s.residual(p)).fold(f64::INFINITY, f64::min)
    }

    /// Normal of the primitive closest to `p`.
    pub fn normal_at(&self, p: &Vec3) -> Vec3 {
        let (_, prim) = self
            .primitives
            .iter()
            .map(|s| (s.residual(p), s))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("non-empty scene");
        prim.normal_at(p)
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self
            .primitives
            .iter()
            .map(|p| match *p {
                Primitive::Plane { point, .. } => v(point),
                Primitive::Sphere { center, .. } => v(center),
                Primitive::BoxInterior { min, max } => (v(min) + v(max)) / 2.0,
            })
            .sum();
        sum / self.primitives.len() as f64
    }

    /// `n` points sampled uniformly by surface area.
    pub fn sample_points(&self, n: usize, seed: u64) -> Result<PointCloud> {
        if n < 2 {
            return Err(Error::InsufficientPoints { needed: 2, got: n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self.primitives.iter().map(|p| p.area()).collect();
        let total: f64 = areas.iter().sum();
        let positions = (0..n)
            .map(|_| {
                let mut pick = rng.gen_range(0.0..total);
                let mut chosen = self.primitives.len() - 1;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        chosen = i;
                        break;
                    }
                    pick -= a;
                }
                self.primitives[chosen].sample(&mut rng)
            })
            .collect();
        Ok(PointCloud::new(positions))
    }

    /// Isotropic Gaussians at sampled surface points with scale equal to half
    /// the nearest-neighbor distance and opacity 0.9.
    pub fn make_gaussians(&self, n: usize, seed: u64) -> Result<GaussianSet> {
        let mut cloud = self.sample_points(n, seed)?;
        cloud.dedup();
        let grid = UniformGrid::new(cloud.positions.clone());
        let gaussians = cloud
            .positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let nn = grid
                    .nearest_excluding(p, i)
                    .map(|n| n.distance)
                    .ok_or(Error::InsufficientPoints { needed: 2, got: 1 })?;
                Gaussian::isotropic(*p, nn / 2.0, 0.9)
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianSet::new(gaussians)
    }

    /// Exact distance map for one camera; pixels whose ray misses are invalid.
    pub fn render_oracle(&self, camera: &Camera) -> DepthMap {
        let values: Vec<f64> = (0..camera.height)
            .into_par_iter()
            .flat_map_iter(|y| (0..camera.width).map(move |x| (x, y)))
            .map(|(x, y)| self.exact_ray_distance(&camera.pixel_ray(x, y)).unwrap_or(0.0))
            .collect();
        DepthMap::from_values(camera.width, camera.height, values).expect("size matches camera")
    }

    pub fn render_oracle_views(&self, cameras: &[Camera]) -> Vec<DepthMap> {
        cameras.par_iter().map(|c| self.render_oracle(c)).collect()
    }
}

/// Placement of cameras on a horizontal circle around a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub target: [f64; 3],
    pub radius: f64,
    /// Height of the camera ring above the target.
    pub height: f64,
    /// Azimuth of the first camera, radians.
    pub start_azimuth: f64,
    pub width: u32,
    pub image_height: u32,
    pub fov_y: f64,
}

impl Orbit {
    pub fn camera_at(&self, azimuth: f64, height: f64) -> Result<Camera> {
        let target = v(self.target);
        let eye = target + Vec3::new(self.radius * azimuth.cos(), self.radius * azimuth.sin(), height);
        Camera::look_at(eye, target, Vec3::z(), self.fov_y, self.width, self.image_height)
    }

    /// `count` cameras evenly spaced in azimuth from `start_azimuth`.
    pub fn cameras(&self, count: usize) -> Result<Vec<Camera>> {
        if count == 0 {
            return Err(Error::invalid("camera count must be at least 1"));
        }
        (0..count)
            .map(|i| self.camera_at(self.start_azimuth + 2.0 * PI * i as f64 / count as f64, self.height))
            .collect()
    }

    /// `count` cameras at seeded random azimuths with heights jittered by up
    /// to `height_jitter`.
    pub fn random_cameras(&self, count: usize, height_jitter: f64, seed: u64) -> Result<Vec<Camera>> {
        if count == 0 {
            return Err(Error::invalid("camera count must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let az = rng.gen_range(0.0..2.0 * PI);
                let h = self.height + rng.gen_range(-1.0..=1.0) * height_jitter;
                self.camera_at(az, h)
            })
            .collect()
    }
}

/// Field that answers every raylet with the exact signed distance from its
/// start to the first surface along its parent ray, and score 0. Raylets
/// whose ray misses every surface get `d = 0`.
#[derive(Debug, Clone)]
pub struct OracleField {
    pub scene: AnalyticScene,
}

impl RayletField for OracleField {
    fn predict(&self, raylets: &[Raylet], out: &mut Vec<[f64; 2]>) -> Result<()> {
        out.clear();
        for r in raylets {
            let ray = Ray {
                origin: r.parent_origin(),
                direction: r.direction,
            };
            let d = self.scene.exact_ray_distance(&ray).map_or(0.0, |t| t - r.t_start);
            out.push([d, 0.0]);
        }
        Ok(())
    }
}
