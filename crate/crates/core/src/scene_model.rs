//! A scene prepared for sampling and feature lookup.

use crate::error::Result;
use crate::sampling::{compute_ball_radii, Primitives, TileIndex};
use crate::scene::{Camera, GaussianSet, PointCloud, SceneInput, Vec3};
use crate::spatial::UniformGrid;

/// Scene input plus its sampling primitives and a KNN index over point
/// positions (Gaussian means for Gaussian scenes).
#[derive(Debug, Clone)]
pub struct SceneModel {
    input: SceneInput,
    primitives: Primitives,
    grid: UniformGrid,
}

impl SceneModel {
    /// Deduplicates the cloud (with a warning) and computes virtual-ball radii.
    pub fn from_points(mut cloud: PointCloud) -> Result<Self> {
        cloud.dedup();
        let balls = compute_ball_radii(&cloud)?;
        let grid = UniformGrid::new(cloud.positions.clone());
        Ok(SceneModel {
            input: SceneInput::Points(cloud),
            primitives: Primitives::Balls(balls),
            grid,
        })
    }

    pub fn from_gaussians(set: GaussianSet) -> Result<Self> {
        let input = SceneInput::Gaussians(set.clone());
        let grid = UniformGrid::new(input.positions());
        Ok(SceneModel {
            input,
            primitives: Primitives::Gaussians(set),
            grid,
        })
    }

    pub fn from_input(input: SceneInput) -> Result<Self> {
        match input {
            SceneInput::Points(c) => SceneModel::from_points(c),
            SceneInput::Gaussians(g) => SceneModel::from_gaussians(g),
        }
    }

    pub fn input(&self) -> &SceneInput {
        &self.input
    }

    pub fn primitives(&self) -> &Primitives {
        &self.primitives
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn positions(&self) -> &[Vec3] {
        self.grid.points()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Per-point opacity for Gaussian scenes.
    pub fn opacity(&self, i: usize) -> Option<f64> {
        match &self.input {
            SceneInput::Gaussians(g) => Some(g.gaussians[i].opacity),
            SceneInput::Points(_) => None,
        }
    }

    pub fn tile_index(&self, camera: &Camera, tile_px: u32) -> TileIndex {
        TileIndex::build(camera, &self.primitives, tile_px)
    }
}
