//! Truncated signed distance fusion of distance maps and mesh extraction.

mod mesh;
mod tables;

use std::collections::HashMap;

use rayon::prelude::*;

pub use mesh::{SurfaceSamples, TriangleMesh, DEGENERATE_AREA};

use crate::error::{Error, Result};
use crate::render::DepthMap;
use crate::scene::{distance_to_depth, Camera, Vec3};
use tables::{CORNERS, EDGES, EDGE_TABLE, TRIANGLE_TABLE};

/// Voxel grid of normalized truncated signed distances. Grid point
/// `(i, j, k)` sits at `origin + voxel_size · (i, j, k)`; storage is x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    /// Volume with truncation `4 · voxel_size`.
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        Self::with_truncation(origin, voxel_size, dims, 4.0 * voxel_size)
    }

    pub fn with_truncation(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) || !(truncation > 0.0) {
            return Err(Error::invalid("voxel size and truncation must be positive"));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= 1 << 31)
            .ok_or_else(|| Error::invalid(format!("unsupported volume dimensions {dims:?}")))?;
        Ok(TsdfVolume {
            origin,
            voxel_size,
            dims,
            truncation,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Smallest volume covering `[min, max]` at the given voxel size.
    pub fn covering(min: Vec3, max: Vec3, voxel_size: f64) -> Result<Self> {
        let extent = max - min;
        let dims = [0, 1, 2].map(|a| (extent[a] / voxel_size).ceil().max(0.0) as usize + 1);
        Self::new(min, voxel_size, dims)
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fuses one view. Each grid point in front of the camera that projects
    /// onto a valid pixel gets the observation
    /// `min(1, (z_surface − z_voxel) / truncation)`, unless it lies more than
    /// one truncation band behind the surface. Observations are averaged
    /// with unit weight per view.
    pub fn integrate(&mut self, depth: &DepthMap, camera: &Camera) -> Result<()> {
        if (depth.width, depth.height) != (camera.width, camera.height) {
            return Err(Error::Shape {
                expected: camera.pixel_count(),
                got: depth.len(),
            });
        }
        // z-depth of each pixel's surface point.
        let surface: Vec<Option<f64>> = camera
            .pixels()
            .map(|(x, y)| depth.get(x, y).and_then(|d| distance_to_depth(d, &camera.pixel_ray(x, y), camera).ok()))
            .collect();
        let cam_from_world = camera.camera_from_world();
        let [nx, ny, _] = self.dims;
        let slab = nx * ny;
        let (origin, voxel, trunc) = (self.origin, self.voxel_size, self.truncation);
        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, (tsdf, weight))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vec3::new(i as f64, j as f64, k as f64) * voxel;
                        let local = cam_from_world.apply(&p);
                        let Some((u, v)) = camera.project_local(&local) else { continue };
                        if !(u >= 0.0 && v >= 0.0 && u < camera.width as f64 && v < camera.height as f64) {
                            continue;
                        }
                        let px = (v as usize) * camera.width as usize + u as usize;
                        let Some(z_surface) = surface[px] else { continue };
                        let sdf = z_surface - local.z;
                        if sdf < -trunc {
                            continue;
                        }
                        let obs = (sdf / trunc).min(1.0);
                        let idx = j * nx + i;
                        let w = weight[idx];
                        tsdf[idx] = (tsdf[idx] * w + obs) / (w + 1.0);
                        weight[idx] = w + 1.0;
                    }
                }
            });
        Ok(())
    }

    /// Marching-cubes triangulation of the zero level set. Cells with any
    /// unobserved corner are skipped; vertices on shared edges are welded.
    pub fn extract_mesh(&self) -> TriangleMesh {
        let [nx, ny, nz] = self.dims;
        let mut mesh = TriangleMesh::default();
        if nx < 2 || ny < 2 || nz < 2 {
            return mesh;
        }
        let mut welded: HashMap<(usize, usize), u32> = HashMap::new();
        for k in 0..nz - 1 {
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let corner_idx = CORNERS.map(|[dx, dy, dz]| self.index(i + dx, j + dy, k + dz));
                    if corner_idx.iter().any(|&c| self.weight[c] <= 0.0) {
                        continue;
                    }
                    let values = corner_idx.map(|c| self.tsdf[c]);
                    let mut case = 0usize;
                    for (bit, v) in values.iter().enumerate() {
                        if *v < 0.0 {
                            case |= 1 << bit;
                        }
                    }
                    let crossed = EDGE_TABLE[case];
                    if crossed == 0 {
                        continue;
                    }
                    let mut edge_vertex = [u32::MAX; 12];
                    for (e, &[a, b]) in EDGES.iter().enumerate() {
                        if crossed & (1 << e) == 0 {
                            continue;
                        }
                        // An edge is identified by its lower grid point and axis.
                        let (lo, hi) = if corner_idx[a] < corner_idx[b] { (a, b) } else { (b, a) };
                        let axis = (0..3).find(|&ax| CORNERS[lo][ax] != CORNERS[hi][ax]).expect("edge spans one axis");
                        let key = (corner_idx[lo], axis);
                        edge_vertex[e] = *welded.entry(key).or_insert_with(|| {
                            let [ai, aj, ak] = CORNERS[lo];
                            let [bi, bj, bk] = CORNERS[hi];
                            let pa = self.point(i + ai, j + aj, k + ak);
                            let pb = self.point(i + bi, j + bj, k + bk);
                            let (va, vb) = (values[lo], values[hi]);
                            let t = if va == vb { 0.5 } else { (va / (va - vb)).clamp(0.0, 1.0) };
                            mesh.vertices.push(pa + (pb - pa) * t);
                            (mesh.vertices.len() - 1) as u32
                        });
                    }
                    for tri in TRIANGLE_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                        let t = [0, 1, 2].map(|c| edge_vertex[tri[c] as usize]);
                        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                            continue;
                        }
                        let [a, b, c] = t.map(|v| mesh.vertices[v as usize]);
                        if 0.5 * (b - a).cross(&(c - a)).norm() < DEGENERATE_AREA {
                            continue;
                        }
                        mesh.triangles.push(t);
                    }
                }
            }
        }
        if !mesh.triangles.is_empty() {
            mesh.compute_vertex_normals();
        }
        mesh
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::RigidTransform;
    use crate::synth::AnalyticScene;

    fn plane_view() -> (Camera, DepthMap) {
        let cam = Camera::new(40.0, 40.0, 32.0, 32.0, 64, 64, RigidTransform::identity()).unwrap();
        let map = AnalyticScene::plane(2.0, 10.0).render_oracle(&cam);
        (cam, map)
    }

    fn plane_volume() -> TsdfVolume {
        TsdfVolume::covering(Vec3::new(-0.5, -0.5, 1.5), Vec3::new(0.5, 0.5, 2.5), 0.05).unwrap()
    }

    #[test]
    fn edge_table_matches_triangles() {
        for case in 0..256 {
            let mut used = 0u16;
            for e in TRIANGLE_TABLE[case].iter().take_while(|e| **e >= 0) {
                used |= 1 << *e;
            }
            assert_eq!(used, EDGE_TABLE[case], "case {case}");
        }
    }

    #[test]
    fn plane_zero_crossing() {
        let (cam, map) = plane_view();
        let mut vol = plane_volume();
        vol.integrate(&map, &cam).unwrap();
        let [nx, ny, nz] = vol.dims;
        for j in 0..ny {
            for i in 0..nx {
                let column: Vec<(f64, f64)> = (0..nz)
                    .filter(|&k| vol.weight[vol.index(i, j, k)] > 0.0)
                    .map(|k| (vol.point(i, j, k).z, vol.tsdf[vol.index(i, j, k)]))
                    .collect();
                for w in column.windows(2) {
                    if w[0].1 > 0.0 && w[1].1 <= 0.0 {
                        let z = w[0].0 + (w[1].0 - w[0].0) * w[0].1 / (w[0].1 - w[1].1);
                        assert!((z - 2.0).abs() < vol.voxel_size / 2.0);
                    }
                }
            }
        }
    }

    #[test]
    fn repeated_view_doubles_weight() {
        let (cam, map) = plane_view();
        let mut once = plane_volume();
        once.integrate(&map, &cam).unwrap();
        let mut twice = once.clone();
        twice.integrate(&map, &cam).unwrap();
        assert_eq!(once.tsdf, twice.tsdf);
        for (a, b) in once.weight.iter().zip(&twice.weight) {
            assert_eq!(*b, 2.0 * a);
        }
    }

    #[test]
    fn invalid_map_changes_nothing() {
        let (cam, _) = plane_view();
        let mut vol = plane_volume();
        let before = vol.clone();
        vol.integrate(&DepthMap::invalid(64, 64), &cam).unwrap();
        assert_eq!(vol, before);
        assert!(vol.extract_mesh().is_empty());
    }

    #[test]
    fn plane_mesh_height() {
        let (cam, map) = plane_view();
        let mut vol = plane_volume();
        vol.integrate(&map, &cam).unwrap();
        let mesh = vol.extract_mesh();
        assert!(!mesh.is_empty());
        assert!(mesh.vertices.iter().all(|v| (v.z - 2.0).abs() < vol.voxel_size));
        mesh.validate().unwrap();
    }

    #[test]
    fn sphere_grid_mesh() {
        // Exact signed distances to a sphere, no camera involved. The radius
        // keeps grid points off the surface, where welding would split vertices.
        let mut vol = TsdfVolume::covering(Vec3::repeat(-1.0), Vec3::repeat(1.0), 0.1).unwrap();
        let [nx, ny, nz] = vol.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = vol.index(i, j, k);
                    vol.tsdf[idx] = ((vol.point(i, j, k).norm() - 0.63) / vol.truncation).clamp(-1.0, 1.0);
                    vol.weight[idx] = 1.0;
                }
            }
        }
        let mesh = vol.extract_mesh();
        assert!(mesh.vertices.iter().all(|v| (v.norm() - 0.63).abs() < 0.02));
        // Closed surface: every welded edge is shared by exactly two triangles.
        let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let bad: Vec<_> = edges.iter().filter(|(_, &c)| c != 2).collect();
        assert!(bad.is_empty(), "{} of {} edges: {:?}", bad.len(), edges.len(), &bad[..bad.len().min(5)]);
        assert!((mesh.area() - 4.0 * std::f64::consts::PI * 0.63 * 0.63).abs() < 0.1);
    }
}
