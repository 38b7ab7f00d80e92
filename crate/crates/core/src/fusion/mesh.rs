//! Indexed triangle meshes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::Vec3;

/// Triangles below this area are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-vertex unit normals.
    pub normals: Option<Vec<Vec3>>,
}

/// Points drawn from a mesh surface with their normals.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = TriangleMesh {
            vertices,
            triangles,
            normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::Range(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: normals.len(),
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn corners(&self, t: &[u32; 3]) -> [Vec3; 3] {
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    /// Unnormalized face normal (twice the area in length).
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(&self.triangles[t]);
        (b - a).cross(&(c - a))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_cross(t).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted vertex normals.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = self.corners(tri);
            let n = (b - a).cross(&(c - a));
            for &i in tri {
                acc[i as usize] += n;
            }
        }
        self.normals = Some(acc.into_iter().map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::z)).collect());
    }

    /// `n` points uniformly distributed by area, seeded. Normals are
    /// interpolated from vertex normals when present, else the face normal.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<SurfaceSamples> {
        let areas: Vec<f64> = (0..self.triangles.len()).map(|t| self.triangle_area(t)).collect();
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut total = 0.0;
        for a in &areas {
            total += a;
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Empty("mesh surface"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let pick = rng.gen_range(0.0..total);
            let t = cumulative.partition_point(|&c| c <= pick).min(areas.len() - 1);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let (u, v, w) = (1.0 - s, s * (1.0 - r2), s * r2);
            let tri = self.triangles[t];
            let [a, b, c] = self.corners(&tri);
            points.push(a * u + b * v + c * w);
            let face = self.face_cross(t).try_normalize(0.0).unwrap_or_else(Vec3::z);
            let normal = match &self.normals {
                Some(vn) => (vn[tri[0] as usize] * u + vn[tri[1] as usize] * v + vn[tri[2] as usize] * w)
                    .try_normalize(1e-12)
                    .unwrap_or(face),
                None => face,
            };
            normals.push(normal);
        }
        Ok(SurfaceSamples { points, normals })
    }
}
