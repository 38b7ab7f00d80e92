//! Raylet feature assembly from the K nearest scene points.
//!
//! Each neighbor contributes one row
//! `[p_k (3) | (p_k − p_l)/‖p_k − p_l‖ (3) | ‖p_k − p_l‖ (1) | f_k (C)]`,
//! and the rows are stacked in ascending distance order. The per-point
//! features `f_k` come from a [`PerPointFeatures`] provider.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Raylet, Vec3};
use crate::scene_model::SceneModel;
use crate::spatial::UniformGrid;

/// Which neighbor geometry goes into each row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborInfo {
    XyzOnly,
    RelativeOnly,
    #[default]
    Both,
}

impl NeighborInfo {
    fn has_xyz(self) -> bool {
        matches!(self, NeighborInfo::XyzOnly | NeighborInfo::Both)
    }

    fn has_relative(self) -> bool {
        matches!(self, NeighborInfo::RelativeOnly | NeighborInfo::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Neighbors per raylet.
    pub k: usize,
    pub info: NeighborInfo,
    /// Per-point feature channels `C`.
    pub channels: usize,
    /// Append Gaussian opacity as one extra channel per neighbor.
    pub include_opacity: bool,
    /// Frequencies of sinusoidal encoding applied to `p_l` and `u_l`
    /// (0 feeds the raw values).
    pub pe_frequencies: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            k: 5,
            info: NeighborInfo::Both,
            channels: 32,
            include_opacity: false,
            pe_frequencies: 0,
        }
    }
}

impl FeatureConfig {
    pub fn geometric_width(&self) -> usize {
        3 * self.info.has_xyz() as usize + 4 * self.info.has_relative() as usize
    }

    pub fn row_width(&self) -> usize {
        self.geometric_width() + self.channels + self.include_opacity as usize
    }

    /// Width of the encoded `p_l ⊕ u_l` head.
    pub fn head_width(&self) -> usize {
        6 * (1 + 2 * self.pe_frequencies)
    }

    /// Width of the network input `p_l ⊕ u_l ⊕ f_l`.
    pub fn input_dim(&self) -> usize {
        self.head_width() + self.k * self.row_width()
    }

    /// Offset of neighbor `k`'s per-point feature channels in the network input.
    pub fn channel_offset(&self, k: usize) -> usize {
        self.head_width() + k * self.row_width() + self.geometric_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// No per-point features (`C = 0`).
    #[default]
    None,
    /// A trainable `N×C` embedding table optimized with the network.
    LearnableTable,
    /// Precomputed embeddings loaded from file.
    Loaded,
}

/// Per-point feature matrix `F ∈ R^{N×C}`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPointFeatures {
    pub mode: FeatureMode,
    pub rows: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl PerPointFeatures {
    pub fn none(rows: usize) -> Self {
        PerPointFeatures {
            mode: FeatureMode::None,
            rows,
            channels: 0,
            values: Vec::new(),
        }
    }

    pub fn new(mode: FeatureMode, rows: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * channels {
            return Err(Error::Shape {
                expected: rows * channels,
                got: values.len(),
            });
        }
        Ok(PerPointFeatures {
            mode,
            rows,
            channels,
            values,
        })
    }

    pub fn trainable(&self) -> bool {
        self.mode == FeatureMode::LearnableTable
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Checks the table against a scene and feature layout.
    pub fn check(&self, scene_len: usize, cfg: &FeatureConfig) -> Result<()> {
        if self.channels != cfg.channels {
            return Err(Error::Shape {
                expected: cfg.channels,
                got: self.channels,
            });
        }
        if self.channels > 0 && self.rows != scene_len {
            return Err(Error::Shape {
                expected: scene_len,
                got: self.rows,
            });
        }
        Ok(())
    }
}

/// Indices of the `k` nearest points ordered by distance then index,
/// padded by repeating the farthest when fewer than `k` points exist.
pub fn knn(query: &Vec3, grid: &UniformGrid, k: usize) -> Result<Vec<usize>> {
    if grid.is_empty() {
        return Err(Error::Empty("scene"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let mut idx: Vec<usize> = grid.knn(query, k).into_iter().map(|n| n.index).collect();
    let last = *idx.last().expect("non-empty scene");
    idx.resize(k, last);
    Ok(idx)
}

/// Assembled network input for one raylet.
#[derive(Debug, Clone, PartialEq)]
pub struct RayletFeature {
    pub start: Vec3,
    pub direction: Vec3,
    pub neighbor_indices: Vec<usize>,
    /// Encoded `p_l ⊕ u_l` (the raw six values when encoding is off).
    pub head: Vec<f64>,
    /// `K` rows of [`FeatureConfig::row_width`] values, flattened.
    pub block: Vec<f64>,
}

impl RayletFeature {
    /// `p_l ⊕ u_l ⊕ f_l`.
    pub fn input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.head.len() + self.block.len());
        v.extend_from_slice(&self.head);
        v.extend_from_slice(&self.block);
        v
    }
}

/// Writes the network input for `raylet` into `out`, reading per-point
/// channels through `channel(point, c)`.
pub(crate) fn write_input<R: Float>(
    cfg: &FeatureConfig,
    raylet: &Raylet,
    neighbors: &[usize],
    scene: &SceneModel,
    channel: impl Fn(usize, usize) -> R,
    out: &mut [R],
) {
    debug_assert_eq!(out.len(), cfg.input_dim());
    let cast = |v: f64| R::from(v).expect("finite cast");
    let head = cfg.head_width();
    for a in 0..3 {
        out[a] = cast(raylet.start[a]);
        out[3 + a] = cast(raylet.direction[a]);
    }
    for j in 0..cfg.pe_frequencies {
        let freq = std::f64::consts::PI * (1u64 << j.min(62)) as f64;
        for a in 0..6 {
            let x = if a < 3 { raylet.start[a] } else { raylet.direction[a - 3] };
            out[6 + 12 * j + a] = cast((freq * x).sin());
            out[6 + 12 * j + 6 + a] = cast((freq * x).cos());
        }
    }
    let width = cfg.row_width();
    let positions = scene.positions();
    for (k, &n) in neighbors.iter().enumerate() {
        let row = &mut out[head + k * width..head + (k + 1) * width];
        let p = positions[n];
        let mut o = 0;
        if cfg.info.has_xyz() {
            for a in 0..3 {
                row[o + a] = cast(p[a]);
            }
            o += 3;
        }
        if cfg.info.has_relative() {
            let offset = p - raylet.start;
            let dist = offset.norm();
            let unit = if dist < 1e-12 { Vec3::zeros() } else { offset / dist };
            let dist = if dist < 1e-12 { 0.0 } else { dist };
            for a in 0..3 {
                row[o + a] = cast(unit[a]);
            }
            row[o + 3] = cast(dist);
            o += 4;
        }
        for c in 0..cfg.channels {
            row[o + c] = channel(n, c);
        }
        o += cfg.channels;
        if cfg.include_opacity {
            row[o] = cast(scene.opacity(n).unwrap_or(1.0));
        }
    }
}

/// Builds the raylet feature `f_l` from the scene's K nearest points.
pub fn assemble_feature(
    raylet: &Raylet,
    scene: &SceneModel,
    feats: &PerPointFeatures,
    cfg: &FeatureConfig,
) -> Result<RayletFeature> {
    cfg.validate()?;
    feats.check(scene.len(), cfg)?;
    let neighbors = knn(&raylet.start, scene.grid(), cfg.k)?;
    let mut input = vec![0.0f64; cfg.input_dim()];
    write_input(
        cfg,
        raylet,
        &neighbors,
        scene,
        |n, c| feats.values[n * feats.channels + c] as f64,
        &mut input,
    );
    let block = input.split_off(cfg.head_width());
    Ok(RayletFeature {
        start: raylet.start,
        direction: raylet.direction,
        neighbor_indices: neighbors,
        head: input,
        block,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian, GaussianSet, PointCloud};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raylet_at(p: Vec3) -> Raylet {
        Raylet {
            start: p,
            direction: Vec3::z(),
            t_start: 1.0,
            source_index: 0,
        }
    }

    fn cfg(k: usize, c: usize) -> FeatureConfig {
        FeatureConfig {
            k,
            info: NeighborInfo::Both,
            channels: c,
            include_opacity: false,
            pe_frequencies: 0,
        }
    }

    #[test]
    fn query_at_point() {
        let grid = UniformGrid::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 3.0]);
        assert_eq!(knn(&Vec3::x(), &grid, 1).unwrap(), vec![1]);
    }

    #[test]
    fn hand_distances() {
        let grid = UniformGrid::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 3.0]);
        assert_eq!(knn(&(Vec3::x() * 0.9), &grid, 2).unwrap(), vec![1, 0]);
    }

    #[test]
    fn padding_repeats_farthest() {
        let grid = UniformGrid::new(vec![Vec3::zeros(), Vec3::x() * 2.0]);
        assert_eq!(knn(&Vec3::zeros(), &grid, 4).unwrap(), vec![0, 1, 1, 1]);
        assert!(knn(&Vec3::zeros(), &UniformGrid::new(vec![]), 1).is_err());
    }

    #[test]
    fn unit_offset_row() {
        let p = Vec3::new(0.5, -0.25, 2.0);
        let scene = SceneModel::from_points(PointCloud::new(vec![p + Vec3::x(), p + Vec3::x() * 5.0])).unwrap();
        let f = assemble_feature(&raylet_at(p), &scene, &PerPointFeatures::none(2), &cfg(1, 0)).unwrap();
        let want = [p.x + 1.0, p.y, p.z, 1.0, 0.0, 0.0, 1.0];
        assert_eq!(f.block.len(), 7);
        for (g, w) in f.block.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn coincident_neighbor_guard() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        let scene = SceneModel::from_points(PointCloud::new(vec![p, p + Vec3::y()])).unwrap();
        let f = assemble_feature(&raylet_at(p), &scene, &PerPointFeatures::none(2), &cfg(1, 0)).unwrap();
        assert_eq!(&f.block[3..7], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn layout_length_with_default_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let scene = SceneModel::from_points(PointCloud::new(pts)).unwrap();
        let values: Vec<f32> = (0..50 * 32).map(|i| i as f32).collect();
        let feats = PerPointFeatures::new(FeatureMode::Loaded, 50, 32, values).unwrap();
        let c = cfg(5, 32);
        let f = assemble_feature(&raylet_at(Vec3::repeat(0.5)), &scene, &feats, &c).unwrap();
        assert_eq!(f.block.len(), 195);
        assert_eq!(c.input_dim(), 6 + 195);
        // Row k carries the k-th neighbor's feature row after its 7 geometric entries.
        for (k, &n) in f.neighbor_indices.iter().enumerate() {
            assert_eq!(f.block[k * 39 + 7], (n * 32) as f64);
        }
    }

    #[test]
    fn ablation_widths() {
        for (info, w) in [(NeighborInfo::XyzOnly, 3), (NeighborInfo::RelativeOnly, 4), (NeighborInfo::Both, 7)] {
            let c = FeatureConfig {
                k: 5,
                info,
                channels: 32,
                include_opacity: true,
                pe_frequencies: 0,
            };
            assert_eq!(c.row_width(), w + 33);
            assert_eq!(c.input_dim(), 6 + 5 * (w + 33));
        }
    }

    #[test]
    fn opacity_channel_for_gaussians() {
        let set = GaussianSet::new(vec![
            Gaussian::isotropic(Vec3::zeros(), 0.1, 0.25).unwrap(),
            Gaussian::isotropic(Vec3::x(), 0.1, 0.75).unwrap(),
        ])
        .unwrap();
        let scene = SceneModel::from_gaussians(set).unwrap();
        let c = FeatureConfig {
            k: 2,
            info: NeighborInfo::RelativeOnly,
            channels: 0,
            include_opacity: true,
            pe_frequencies: 0,
        };
        let f = assemble_feature(&raylet_at(Vec3::new(0.1, 0.0, 0.0)), &scene, &PerPointFeatures::none(2), &c).unwrap();
        assert_eq!(f.block[4], 0.25);
        assert_eq!(f.block[9], 0.75);
    }

    #[test]
    fn positional_encoding_head() {
        let scene = SceneModel::from_points(PointCloud::new(vec![Vec3::zeros(), Vec3::x()])).unwrap();
        let c = FeatureConfig {
            pe_frequencies: 2,
            ..cfg(1, 0)
        };
        assert_eq!(c.input_dim(), 30 + 7);
        let r = raylet_at(Vec3::new(0.25, 0.0, 0.0));
        let f = assemble_feature(&r, &scene, &PerPointFeatures::none(2), &c).unwrap();
        assert_eq!(f.head.len(), 30);
        assert_eq!(&f.head[..6], &[0.25, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let pi = std::f64::consts::PI;
        assert!((f.head[6] - (pi * 0.25).sin()).abs() < 1e-15);
        assert!((f.head[12] - (pi * 0.25).cos()).abs() < 1e-15);
        assert!((f.head[18] - (2.0 * pi * 0.25).sin()).abs() < 1e-15);
        assert_eq!(f.input().len(), 37);
    }

    #[test]
    fn feature_shape_mismatch() {
        let scene = SceneModel::from_points(PointCloud::new(vec![Vec3::zeros(), Vec3::x()])).unwrap();
        let feats = PerPointFeatures::new(FeatureMode::Loaded, 2, 4, vec![0.0; 8]).unwrap();
        assert!(matches!(
            assemble_feature(&raylet_at(Vec3::zeros()), &scene, &feats, &cfg(1, 3)),
            Err(Error::Shape { .. })
        ));
    }

    proptest! {
        #[test]
        fn relative_block_is_translation_invariant(
            seed in 0u64..1000,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..40).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let shift = Vec3::new(tx, ty, tz);
            let q = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let a = SceneModel::from_points(PointCloud::new(pts.clone())).unwrap();
            let b = SceneModel::from_points(PointCloud::new(pts.iter().map(|p| p + shift).collect())).unwrap();
            let c = cfg(5, 0);
            let fa = assemble_feature(&raylet_at(q), &a, &PerPointFeatures::none(40), &c).unwrap();
            let fb = assemble_feature(&raylet_at(q + shift), &b, &PerPointFeatures::none(40), &c).unwrap();
            prop_assert_eq!(&fa.neighbor_indices, &fb.neighbor_indices);
            for k in 0..5 {
                for j in 0..3 {
                    prop_assert!((fa.block[k * 7 + j] + shift[j] - fb.block[k * 7 + j]).abs() < 1e-9);
                }
                for j in 3..7 {
                    prop_assert!((fa.block[k * 7 + j] - fb.block[k * 7 + j]).abs() < 1e-9);
                }
            }
        }
    }
}
