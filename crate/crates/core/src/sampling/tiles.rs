use super::{gaussians::ALPHA_SKIP, Primitives, RayletCandidate};
use crate::scene::{Camera, Ray, Vec3};

pub const DEFAULT_TILE_PX: u32 = 16;

/// Screen-space binning of primitives for one camera.
///
/// Each primitive is registered in every tile its conservative screen
/// footprint overlaps. Primitives whose bound straddles the camera plane
/// cannot be projected and go to a list shared by all tiles.
#[derive(Debug, Clone)]
pub struct TileIndex {
    camera: Camera,
    tile_px: u32,
    tiles_x: u32,
    tiles_y: u32,
    bucket_start: Vec<u32>,
    entries: Vec<u32>,
    shared: Vec<u32>,
}

/// Inclusive tile rectangle.
#[derive(Debug, Clone, Copy)]
enum Footprint {
    Culled,
    Everywhere,
    Tiles { x0: u32, x1: u32, y0: u32, y1: u32 },
}

const PIXEL_MARGIN: f64 = 1.0;
const NEAR_EPS: f64 = 1e-9;

impl TileIndex {
    pub fn build(camera: &Camera, primitives: &Primitives, tile_px: u32) -> TileIndex {
        let tile_px = tile_px.max(1);
        let tiles_x = camera.width.div_ceil(tile_px);
        let tiles_y = camera.height.div_ceil(tile_px);
        let cam_from_world = camera.camera_from_world();
        let footprints: Vec<Footprint> = (0..primitives.len())
            .map(|i| match camera_space_bound(primitives, i, &cam_from_world.rotation, &cam_from_world.translation) {
                Some((c, h)) => footprint(camera, tile_px, tiles_x, tiles_y, &c, &h),
                None => Footprint::Culled,
            })
            .collect();

        let n_tiles = (tiles_x * tiles_y) as usize;
        let mut counts = vec![0u32; n_tiles + 1];
        let mut shared = Vec::new();
        for (i, f) in footprints.iter().enumerate() {
            match *f {
                Footprint::Culled => {}
                Footprint::Everywhere => shared.push(i as u32),
                Footprint::Tiles { x0, x1, y0, y1 } => {
                    for ty in y0..=y1 {
                        for tx in x0..=x1 {
                            counts[(ty * tiles_x + tx) as usize + 1] += 1;
                        }
                    }
                }
            }
        }
        for i in 0..n_tiles {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![0u32; counts[n_tiles] as usize];
        for (i, f) in footprints.iter().enumerate() {
            if let Footprint::Tiles { x0, x1, y0, y1 } = *f {
                for ty in y0..=y1 {
                    for tx in x0..=x1 {
                        let b = (ty * tiles_x + tx) as usize;
                        entries[cursor[b] as usize] = i as u32;
                        cursor[b] += 1;
                    }
                }
            }
        }
        TileIndex {
            camera: *camera,
            tile_px,
            tiles_x,
            tiles_y,
            bucket_start: counts,
            entries,
            shared,
        }
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn tile_px(&self) -> u32 {
        self.tile_px
    }

    pub fn tile_count(&self) -> (u32, u32) {
        (self.tiles_x, self.tiles_y)
    }

    /// Primitives registered for tile `(tx, ty)`, excluding the shared list.
    pub fn bucket(&self, tx: u32, ty: u32) -> &[u32] {
        let b = (ty * self.tiles_x + tx) as usize;
        &self.entries[self.bucket_start[b] as usize..self.bucket_start[b + 1] as usize]
    }

    /// Primitives that every tile must consider.
    pub fn shared(&self) -> &[u32] {
        &self.shared
    }

    /// Mean number of primitives examined per tile.
    pub fn mean_bucket_len(&self) -> f64 {
        let n = (self.tiles_x * self.tiles_y) as f64;
        self.entries.len() as f64 / n + self.shared.len() as f64
    }

    fn indices_at(&self, u: f64, v: f64) -> impl Iterator<Item = usize> + '_ {
        let tx = ((u / self.tile_px as f64) as u32).min(self.tiles_x - 1);
        let ty = ((v / self.tile_px as f64) as u32).min(self.tiles_y - 1);
        self.bucket(tx, ty)
            .iter()
            .chain(self.shared.iter())
            .map(|&i| i as usize)
    }

    /// Candidates for the ray through the center of pixel `(px, py)`.
    pub fn candidates_for_pixel(&self, primitives: &Primitives, px: u32, py: u32, t: usize) -> Vec<RayletCandidate> {
        let ray = self.camera.pixel_ray(px, py);
        primitives.candidates_among(&ray, self.indices_at(px as f64 + 0.5, py as f64 + 0.5), t)
    }

    /// Candidates for an arbitrary ray leaving the camera center. Rays that
    /// project outside the image fall back to the exhaustive scan.
    pub fn candidates_for_ray(&self, primitives: &Primitives, ray: &Ray, t: usize) -> Vec<RayletCandidate> {
        let local = self.camera.world_from_camera.rotation.transpose() * ray.direction;
        let same_origin = ray.origin == self.camera.center();
        if same_origin {
            if let Some((u, v)) = self.camera.project_local(&local) {
                if u >= 0.0 && v >= 0.0 && u < self.camera.width as f64 && v < self.camera.height as f64 {
                    return primitives.candidates_among(ray, self.indices_at(u, v), t);
                }
            }
        }
        primitives.candidates(ray, t)
    }
}

/// Axis-aligned box (center, half extents) in camera space containing every
/// point at which the primitive can produce a candidate.
fn camera_space_bound(
    primitives: &Primitives,
    i: usize,
    rotation: &nalgebra::Matrix3<f64>,
    translation: &Vec3,
) -> Option<(Vec3, Vec3)> {
    match primitives {
        Primitives::Balls(b) => {
            let c = rotation * b.centers[i] + translation;
            Some((c, Vec3::repeat(b.radii[i])))
        }
        Primitives::Gaussians(set) => {
            let g = &set.gaussians[i];
            // alpha >= ALPHA_SKIP needs Mahalanobis distance <= sqrt(2 ln(opacity / ALPHA_SKIP)).
            let ratio = g.opacity / ALPHA_SKIP;
            if !(ratio >= 1.0) {
                return None;
            }
            let rho = (2.0 * ratio.ln()).sqrt() * (1.0 + 1e-9) + 1e-12;
            let cov = rotation * g.covariance() * rotation.transpose();
            let c = rotation * g.mean + translation;
            let h = Vec3::new(cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()) * rho;
            Some((c, h))
        }
    }
}

fn footprint(camera: &Camera, tile_px: u32, tiles_x: u32, tiles_y: u32, c: &Vec3, h: &Vec3) -> Footprint {
    let z_max = c.z + h.z;
    let z_min = c.z - h.z;
    if z_max <= 0.0 {
        return Footprint::Culled;
    }
    if z_min <= NEAR_EPS {
        return Footprint::Everywhere;
    }
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let p = Vec3::new(c.x + sx * h.x, c.y + sy * h.y, c.z + sz * h.z);
                let (u, v) = camera.project_local(&p).expect("corner in front of camera");
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
        }
    }
    u0 -= PIXEL_MARGIN;
    v0 -= PIXEL_MARGIN;
    u1 += PIXEL_MARGIN;
    v1 += PIXEL_MARGIN;
    let (w, hgt) = (camera.width as f64, camera.height as f64);
    if !(u1 >= 0.0 && v1 >= 0.0 && u0 < w && v0 < hgt) {
        return Footprint::Culled;
    }
    let tile = tile_px as f64;
    let to_tile = |x: f64, n: u32| ((x.max(0.0) / tile).floor() as u32).min(n - 1);
    Footprint::Tiles {
        x0: to_tile(u0, tiles_x),
        x1: to_tile(u1, tiles_x),
        y0: to_tile(v0, tiles_y),
        y1: to_tile(v1, tiles_y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::VirtualBallSet;
    use crate::scene::RigidTransform;

    fn camera() -> Camera {
        Camera::new(100.0, 100.0, 32.0, 32.0, 64, 64, RigidTransform::identity()).unwrap()
    }

    fn balls(centers: Vec<Vec3>, r: f64) -> Primitives {
        Primitives::Balls(VirtualBallSet {
            radii: vec![r; centers.len()],
            centers,
        })
    }

    #[test]
    fn small_ball_lands_in_one_tile() {
        // Projects to pixel (40, 40): tile (2, 2) with 16 px tiles.
        let p = balls(vec![Vec3::new(0.08, 0.08, 1.0)], 0.01);
        let idx = TileIndex::build(&camera(), &p, 16);
        let mut hits = vec![];
        for ty in 0..4 {
            for tx in 0..4 {
                if !idx.bucket(tx, ty).is_empty() {
                    hits.push((tx, ty));
                }
            }
        }
        assert_eq!(hits, vec![(2, 2)]);
        assert!(idx.shared().is_empty());
    }

    #[test]
    fn ball_behind_camera_is_culled() {
        let p = balls(vec![Vec3::new(0.0, 0.0, -3.0)], 0.5);
        let idx = TileIndex::build(&camera(), &p, 16);
        assert_eq!(idx.mean_bucket_len(), 0.0);
    }

    #[test]
    fn straddling_ball_is_shared() {
        let p = balls(vec![Vec3::new(0.0, 0.0, 0.1)], 0.5);
        let idx = TileIndex::build(&camera(), &p, 16);
        assert_eq!(idx.shared(), &[0]);
    }

    #[test]
    fn off_screen_ball_is_culled() {
        let p = balls(vec![Vec3::new(5.0, 0.0, 1.0)], 0.1);
        let idx = TileIndex::build(&camera(), &p, 16);
        assert_eq!(idx.mean_bucket_len(), 0.0);
    }
}
