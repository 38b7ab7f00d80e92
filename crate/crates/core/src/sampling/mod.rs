//! Raylet sampling: up to `T` starting points per query ray.
//!
//! Point clouds use virtual balls (radius = nearest-neighbor distance) and
//! the feet of perpendiculars from ball centers onto the ray. Gaussian sets
//! use the closed-form density maximum along the ray, ranked by
//! front-to-back alpha-blending contribution. Both routes have an exhaustive
//! per-ray scan and a tile-binned route that must agree with it exactly.

mod balls;
mod gaussians;
mod tiles;

pub use balls::{ball_candidate, compute_ball_radii, ray_ball_feet, VirtualBallSet};
pub use gaussians::{gaussian_top_contributions, ray_gaussian_t, ALPHA_CAP, ALPHA_SKIP};
pub use tiles::{TileIndex, DEFAULT_TILE_PX};

use crate::scene::{GaussianSet, Ray, Raylet};

/// A raylet plus the key it was ranked by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayletCandidate {
    pub raylet: Raylet,
    /// Perpendicular distance for balls, alpha-blending contribution for Gaussians.
    pub rank_key: f64,
    pub source_index: usize,
}

/// Sampling primitives of a scene.
#[derive(Debug, Clone)]
pub enum Primitives {
    Balls(VirtualBallSet),
    Gaussians(GaussianSet),
}

impl Primitives {
    pub fn len(&self) -> usize {
        match self {
            Primitives::Balls(b) => b.len(),
            Primitives::Gaussians(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exhaustive scan over every primitive.
    pub fn candidates(&self, ray: &Ray, t: usize) -> Vec<RayletCandidate> {
        self.candidates_among(ray, 0..self.len(), t)
    }

    /// Candidate selection restricted to `indices`. Agrees with
    /// [`candidates`](Self::candidates) whenever `indices` contains every
    /// primitive the ray actually selects.
    pub fn candidates_among(
        &self,
        ray: &Ray,
        indices: impl IntoIterator<Item = usize>,
        t: usize,
    ) -> Vec<RayletCandidate> {
        match self {
            Primitives::Balls(b) => balls::select(ray, b, indices, t),
            Primitives::Gaussians(g) => gaussians::select(ray, g, indices, t),
        }
    }
}

/// Keeps the `t` smallest elements under `cmp`, sorted.
fn top_sorted<T>(mut items: Vec<T>, t: usize, cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> Vec<T> {
    if items.len() > t && t > 0 {
        items.select_nth_unstable_by(t - 1, &cmp);
        items.truncate(t);
    }
    items.sort_by(&cmp);
    items.truncate(t);
    items
}
