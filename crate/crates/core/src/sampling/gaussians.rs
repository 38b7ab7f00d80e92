use std::cmp::Ordering;

use super::{top_sorted, RayletCandidate};
use crate::error::{Error, Result};
use crate::scene::{Gaussian, GaussianSet, Ray, Raylet};

/// Upper clamp on per-Gaussian alpha.
pub const ALPHA_CAP: f64 = 0.99;
/// Gaussians whose alpha falls below this are skipped entirely.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;

const MAX_CONDITION: f64 = 1e12;

/// Ray parameter maximizing the Gaussian density restricted to the ray:
/// `t = r_dᵀ Σ⁻¹ (μ − r_o) / (r_dᵀ Σ⁻¹ r_d)`.
pub fn ray_gaussian_t(ray: &Ray, g: &Gaussian) -> Result<f64> {
    let condition = g.condition_number();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateGaussian { condition });
    }
    Ok(closed_form_t(ray, g))
}

#[inline]
fn closed_form_t(ray: &Ray, g: &Gaussian) -> f64 {
    let p_d = g.precision() * ray.direction;
    p_d.dot(&(g.mean - ray.origin)) / p_d.dot(&ray.direction)
}

/// Intersection of a ray with one Gaussian, before transmittance.
#[derive(Debug, Clone, Copy)]
struct Hit {
    index: usize,
    t: f64,
    alpha: f64,
}

fn hit(ray: &Ray, g: &Gaussian, index: usize) -> Option<Hit> {
    if !(g.condition_number() <= MAX_CONDITION) {
        return None;
    }
    let t = closed_form_t(ray, g);
    if !(t > 0.0) {
        return None;
    }
    let alpha = (g.opacity * g.density(&ray.at(t))).min(ALPHA_CAP);
    (alpha >= ALPHA_SKIP).then_some(Hit { index, t, alpha })
}

fn by_contribution(a: &RayletCandidate, b: &RayletCandidate) -> Ordering {
    b.rank_key
        .total_cmp(&a.rank_key)
        .then(a.raylet.t_start.total_cmp(&b.raylet.t_start))
        .then(a.source_index.cmp(&b.source_index))
}

/// Every contributing Gaussian along the ray, front to back, with its
/// alpha-blending weight `αᵢ·∏ⱼ₍ⱼ<ᵢ₎(1−αⱼ)`.
fn contributions(ray: &Ray, set: &GaussianSet, indices: impl IntoIterator<Item = usize>) -> Vec<RayletCandidate> {
    let mut hits: Vec<Hit> = indices
        .into_iter()
        .filter_map(|i| hit(ray, &set.gaussians[i], i))
        .collect();
    hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.index.cmp(&b.index)));
    let mut transmittance = 1.0;
    hits.iter()
        .map(|h| {
            let w = h.alpha * transmittance;
            transmittance *= 1.0 - h.alpha;
            RayletCandidate {
                raylet: Raylet::on_ray(ray, h.t, h.index),
                rank_key: w,
                source_index: h.index,
            }
        })
        .collect()
}

pub(super) fn select(
    ray: &Ray,
    set: &GaussianSet,
    indices: impl IntoIterator<Item = usize>,
    t: usize,
) -> Vec<RayletCandidate> {
    top_sorted(contributions(ray, set, indices), t, by_contribution)
}

/// The `t` Gaussians with the largest alpha-blending contribution along the
/// ray, by exhaustive scan; raylets start at the density maxima.
pub fn gaussian_top_contributions(ray: &Ray, set: &GaussianSet, t: usize) -> Vec<RayletCandidate> {
    select(ray, set, 0..set.len(), t)
}
