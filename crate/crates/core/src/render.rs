//! Per-pixel ray-distance and normal maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{blend, BlendMode, BlendTerm, RayletField};
use crate::sampling::{RayletCandidate, TileIndex, DEFAULT_TILE_PX};
use crate::scene::{Camera, Ray, Raylet, Vec3};
use crate::scene_model::SceneModel;

/// Per-pixel ray-surface distance with a validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        DepthMap {
            width,
            height,
            values: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Builds a map from raw values; anything not finite and positive is invalid.
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        let n = width as usize * height as usize;
        if values.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: values.len(),
            });
        }
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let values = values.iter().zip(&valid).map(|(v, ok)| if *ok { *v } else { 0.0 }).collect();
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// `(prediction, reference)` for pixels valid in both maps.
    pub fn paired_with(&self, reference: &DepthMap) -> Result<(Vec<f64>, Vec<f64>)> {
        if (self.width, self.height) != (reference.width, reference.height) {
            return Err(Error::Shape {
                expected: reference.len(),
                got: self.len(),
            });
        }
        Ok((0..self.len())
            .filter(|&i| self.valid[i] && reference.valid[i])
            .map(|i| (self.values[i], reference.values[i]))
            .unzip())
    }
}

/// Per-pixel unit world-space normals with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: u32,
    pub height: u32,
    pub normals: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl NormalMap {
    pub fn get(&self, x: u32, y: u32) -> Option<Vec3> {
        let i = y as usize * self.width as usize + x as usize;
        self.valid[i].then(|| self.normals[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Blended ray-surface distance for one ray from its sampled candidates.
/// `None` when there are no candidates or the blend is not a positive distance.
pub fn blend_candidates(
    ray: &Ray,
    candidates: &[RayletCandidate],
    field: &(impl RayletField + ?Sized),
    mode: BlendMode,
) -> Result<Option<f64>> {
    if candidates.is_empty() {
        return Ok(None);
    }
    let raylets: Vec<Raylet> = candidates.iter().map(|c| c.raylet).collect();
    let mut outputs = Vec::with_capacity(raylets.len());
    field.predict(&raylets, &mut outputs)?;
    let terms: Vec<BlendTerm<f64>> = raylets
        .iter()
        .zip(&outputs)
        .map(|(r, [d, s])| BlendTerm {
            value: (r.start - ray.origin).norm() + d,
            score: *s,
            t_start: r.t_start,
        })
        .collect();
    Ok(blend(&terms, mode)
        .map(|b| b.distance)
        .filter(|d| d.is_finite() && *d > 0.0))
}

/// Renders the ray-surface distance for every pixel of `camera`.
pub fn render_distance(
    scene: &SceneModel,
    field: &(impl RayletField + ?Sized),
    camera: &Camera,
    t_test: usize,
) -> Result<DepthMap> {
    if t_test == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    let tiles = scene.tile_index(camera, DEFAULT_TILE_PX);
    let mode = field.blend_mode();
    let w = camera.width as usize;
    let mut map = DepthMap::invalid(camera.width, camera.height);
    let rows: Vec<Vec<Option<f64>>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            (0..camera.width)
                .map(|x| {
                    let cands = tiles.candidates_for_pixel(scene.primitives(), x, y, t_test);
                    blend_candidates(&camera.pixel_ray(x, y), &cands, field, mode)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    for (y, row) in rows.into_iter().enumerate() {
        for (x, d) in row.into_iter().enumerate() {
            if let Some(d) = d {
                map.values[y * w + x] = d;
                map.valid[y * w + x] = true;
            }
        }
    }
    Ok(map)
}

/// Angular probe step for the normal derivatives, radians.
pub const NORMAL_PROBE_STEP: f64 = 1e-4;

/// Camera-frame unit direction for spherical angles
/// `(sin θ cos φ, cos θ, sin θ sin φ)`.
pub fn spherical_direction(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin())
}

/// Spherical angles `(θ, φ)` of a camera-frame unit direction.
pub fn spherical_angles(dir: &Vec3) -> (f64, f64) {
    (dir.y.clamp(-1.0, 1.0).acos(), dir.z.atan2(dir.x))
}

/// The two tangent vectors `(∂Φ/∂φ, ∂Φ/∂θ)` of `Φ(θ, φ) = D·dir(θ, φ)`.
pub fn surface_tangents(d: f64, d_theta: f64, d_phi: f64, theta: f64, phi: f64) -> (Vec3, Vec3) {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let radial = Vec3::new(st * cp, ct, st * sp);
    let dphi = radial * d_phi + Vec3::new(-st * sp, 0.0, st * cp) * d;
    let dtheta = radial * d_theta + Vec3::new(ct * cp, -st, ct * sp) * d;
    (dphi, dtheta)
}

struct Probe {
    distance: f64,
    sources: Vec<usize>,
}

fn probe(
    scene: &SceneModel,
    field: &(impl RayletField + ?Sized),
    tiles: &TileIndex,
    camera: &Camera,
    theta: f64,
    phi: f64,
    t_test: usize,
) -> Result<Option<Probe>> {
    let ray = camera.ray_from_local_direction(&spherical_direction(theta, phi));
    let cands = tiles.candidates_for_ray(scene.primitives(), &ray, t_test);
    let mut sources: Vec<usize> = cands.iter().map(|c| c.source_index).collect();
    sources.sort_unstable();
    Ok(blend_candidates(&ray, &cands, field, field.blend_mode())?.map(|distance| Probe { distance, sources }))
}

/// Surface normal at pixel `(px, py)` from the angular derivatives of the
/// rendered distance, in world space and facing the camera. `None` when the
/// pixel is invalid or the candidate set changes across the probes.
pub fn analytic_normal(
    scene: &SceneModel,
    field: &(impl RayletField + ?Sized),
    tiles: &TileIndex,
    camera: &Camera,
    px: u32,
    py: u32,
    t_test: usize,
) -> Result<Option<Vec3>> {
    let local = Vec3::new(
        (px as f64 + 0.5 - camera.cx) / camera.fx,
        (py as f64 + 0.5 - camera.cy) / camera.fy,
        1.0,
    )
    .normalize();
    let (theta, phi) = spherical_angles(&local);
    let h = NORMAL_PROBE_STEP;
    let mut probes = Vec::with_capacity(5);
    for (dt, dp) in [(0.0, 0.0), (h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
        match probe(scene, field, tiles, camera, theta + dt, phi + dp, t_test)? {
            Some(p) => probes.push(p),
            None => return Ok(None),
        }
    }
    if probes[1..].iter().any(|p| p.sources != probes[0].sources) {
        return Ok(None);
    }
    let d = probes[0].distance;
    let d_theta = (probes[1].distance - probes[2].distance) / (2.0 * h);
    let d_phi = (probes[3].distance - probes[4].distance) / (2.0 * h);
    let (t_phi, t_theta) = surface_tangents(d, d_theta, d_phi, theta, phi);
    let Some(n) = t_phi.cross(&t_theta).try_normalize(1e-300) else {
        return Ok(None);
    };
    let mut n = camera.world_from_camera.rotation * n;
    let ray_dir = camera.world_from_camera.rotation * local;
    if n.dot(&ray_dir) > 0.0 {
        n = -n;
    }
    Ok(Some(n.normalize()))
}

/// Normal map over every pixel of `camera`.
pub fn render_normals(
    scene: &SceneModel,
    field: &(impl RayletField + ?Sized),
    camera: &Camera,
    t_test: usize,
) -> Result<NormalMap> {
    if t_test == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    let tiles = scene.tile_index(camera, DEFAULT_TILE_PX);
    let rows: Vec<Vec<Option<Vec3>>> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            (0..camera.width)
                .map(|x| analytic_normal(scene, field, &tiles, camera, x, y, t_test))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n = camera.pixel_count();
    let mut map = NormalMap {
        width: camera.width,
        height: camera.height,
        normals: vec![Vec3::zeros(); n],
        valid: vec![false; n],
    };
    for (i, v) in rows.into_iter().flatten().enumerate() {
        if let Some(v) = v {
            map.normals[i] = v;
            map.valid[i] = true;
        }
    }
    Ok(map)
}

/// Angle between two directions in degrees.
pub fn angle_degrees(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}
