use std::cmp::Ordering;

use super::{top_sorted, RayletCandidate};
use crate::error::{Error, Result};
use crate::scene::{PointCloud, Ray, Raylet, Vec3};
use crate::spatial::UniformGrid;

/// One ball per input point, with radius equal to the distance to the
/// point's nearest neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualBallSet {
    pub centers: Vec<Vec3>,
    pub radii: Vec<f64>,
}

impl VirtualBallSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Exact nearest-neighbor radii, computed through a uniform grid.
pub fn compute_ball_radii(cloud: &PointCloud) -> Result<VirtualBallSet> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n });
    }
    let grid = UniformGrid::new(cloud.positions.clone());
    let mut radii = Vec::with_capacity(n);
    for (i, p) in cloud.positions.iter().enumerate() {
        let nn = grid
            .nearest_excluding(p, i)
            .expect("at least two points present");
        if nn.distance <= 0.0 {
            return Err(Error::DegenerateRadius {
                first: i.min(nn.index),
                second: i.max(nn.index),
            });
        }
        radii.push(nn.distance);
    }
    Ok(VirtualBallSet {
        centers: cloud.positions.clone(),
        radii,
    })
}

/// The foot of the perpendicular from `center` onto `ray`, if the ball is
/// intersected in front of the ray origin.
#[inline]
pub fn ball_candidate(ray: &Ray, center: &Vec3, radius: f64, index: usize) -> Option<RayletCandidate> {
    let t = (center - ray.origin).dot(&ray.direction);
    if !(t > 0.0) {
        return None;
    }
    let foot = ray.at(t);
    let perp = (center - foot).norm();
    (perp <= radius).then_some(RayletCandidate {
        raylet: Raylet {
            start: foot,
            direction: ray.direction,
            t_start: t,
            source_index: index,
        },
        rank_key: perp,
        source_index: index,
    })
}

fn rank(a: &RayletCandidate, b: &RayletCandidate) -> Ordering {
    a.rank_key
        .total_cmp(&b.rank_key)
        .then(a.raylet.t_start.total_cmp(&b.raylet.t_start))
        .then(a.source_index.cmp(&b.source_index))
}

pub(super) fn select(
    ray: &Ray,
    balls: &VirtualBallSet,
    indices: impl IntoIterator<Item = usize>,
    t: usize,
) -> Vec<RayletCandidate> {
    let hits: Vec<RayletCandidate> = indices
        .into_iter()
        .filter_map(|i| ball_candidate(ray, &balls.centers[i], balls.radii[i], i))
        .collect();
    top_sorted(hits, t, rank)
}

/// Up to `t` raylets whose intersected balls have the shortest perpendicular
/// distances to the ray, by exhaustive scan. Empty when no ball is hit.
pub fn ray_ball_feet(ray: &Ray, balls: &VirtualBallSet, t: usize) -> Vec<RayletCandidate> {
    select(ray, balls, 0..balls.len(), t)
}
