//! Exact k-nearest-neighbor search over a uniform grid.

use std::cmp::Ordering;

use crate::scene::Vec3;

/// A neighbor and its Euclidean distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

impl Neighbor {
    /// Ascending distance, then ascending index.
    pub fn cmp_rank(&self, other: &Neighbor) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

/// Bucketed point set answering exact KNN queries.
///
/// Distances are computed as `(p - q).norm()`, the same expression a linear
/// scan uses, so results agree bit for bit with brute force.
#[derive(Debug, Clone)]
pub struct UniformGrid {
    points: Vec<Vec3>,
    min: Vec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    entries: Vec<u32>,
}

const TARGET_PER_CELL: f64 = 2.0;
const MAX_CELLS: usize = 1 << 24;

impl UniformGrid {
    pub fn new(points: Vec<Vec3>) -> Self {
        let n = points.len().max(1);
        let (min, max) = bounds(&points);
        let extent = (max - min).map(|e| e.max(1e-9));
        // Surface-like data fills few cells, so size from the two largest extents.
        let mut e = [extent.x, extent.y, extent.z];
        e.sort_by(f64::total_cmp);
        let area = e[1] * e[2];
        let mut cell = (area * TARGET_PER_CELL / n as f64).sqrt().max(1e-9);
        let mut dims;
        loop {
            dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).max(1));
            if dims.iter().product::<usize>() <= MAX_CELLS.max(n) {
                break;
            }
            cell *= 1.5;
        }
        let total = dims.iter().product::<usize>();
        let mut counts = vec![0u32; total + 1];
        let cell_of: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = cell_coords(p, &min, cell, &dims);
                flat(c, &dims)
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![0u32; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            entries[cursor[c] as usize] = i as u32;
            cursor[c] += 1;
        }
        UniformGrid {
            points,
            min,
            cell,
            dims,
            cell_start: counts,
            entries,
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points, ordered by distance then index.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        self.knn_filtered(query, k, |_| true)
    }

    /// Like [`knn`](Self::knn) but only over points accepted by `keep`.
    pub fn knn_filtered(&self, query: &Vec3, k: usize, keep: impl Fn(usize) -> bool) -> Vec<Neighbor> {
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        let center = self.unclamped_cell(query);
        // First ring that touches the grid, and the ring that covers all of it.
        let mut first_ring = 0i64;
        let mut last_ring = 0i64;
        for a in 0..3 {
            let top = self.dims[a] as i64 - 1;
            first_ring = first_ring.max(-center[a]).max(center[a] - top);
            last_ring = last_ring.max(center[a].abs()).max((top - center[a]).abs());
        }
        for ring in first_ring..=last_ring {
            self.visit_ring(query, center, ring, k, &keep, &mut best);
            if best.len() == k {
                let kth = best[k - 1].distance;
                match self.unvisited_bound(query, center, ring) {
                    None => break,
                    Some(bound) if kth < bound * (1.0 - 1e-12) - 1e-300 => break,
                    _ => {}
                }
            } else if self.unvisited_bound(query, center, ring).is_none() {
                break;
            }
        }
        best
    }

    /// Nearest point other than `exclude`.
    pub fn nearest_excluding(&self, query: &Vec3, exclude: usize) -> Option<Neighbor> {
        self.knn_filtered(query, 1, |i| i != exclude).into_iter().next()
    }

    fn unclamped_cell(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.min[a]) / self.cell).floor() as i64)
    }

    fn visit_ring(
        &self,
        query: &Vec3,
        center: [i64; 3],
        ring: i64,
        k: usize,
        keep: &impl Fn(usize) -> bool,
        best: &mut Vec<Neighbor>,
    ) {
        let lo = [0, 1, 2].map(|a| (center[a] - ring).max(0));
        let hi = [0, 1, 2].map(|a| (center[a] + ring).min(self.dims[a] as i64 - 1));
        if (0..3).any(|a| lo[a] > hi[a]) {
            return;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let on_shell_yz = (z - center[2]).abs() == ring || (y - center[1]).abs() == ring;
                let mut x = lo[0];
                while x <= hi[0] {
                    if !on_shell_yz && (x - center[0]).abs() != ring {
                        // Interior of the shell was covered by earlier rings; jump across.
                        let jump = center[0] + ring;
                        if jump > x {
                            x = jump;
                            continue;
                        }
                    }
                    let c = flat([x as usize, y as usize, z as usize], &self.dims);
                    let (s, e) = (self.cell_start[c] as usize, self.cell_start[c + 1] as usize);
                    for &i in &self.entries[s..e] {
                        let i = i as usize;
                        if !keep(i) {
                            continue;
                        }
                        let cand = Neighbor {
                            index: i,
                            distance: (self.points[i] - query).norm(),
                        };
                        insert_bounded(best, cand, k);
                    }
                    x += 1;
                }
            }
        }
    }

    /// Lower bound on the distance from `query` to any cell outside the visited
    /// cube of the given ring; `None` when the cube already covers the grid.
    fn unvisited_bound(&self, query: &Vec3, center: [i64; 3], ring: i64) -> Option<f64> {
        let mut bound = f64::INFINITY;
        let mut covered = true;
        for a in 0..3 {
            let lo = center[a] - ring;
            let hi = center[a] + ring;
            if lo > 0 {
                covered = false;
                let face = self.min[a] + lo as f64 * self.cell;
                bound = bound.min((query[a] - face).max(0.0));
            }
            if hi < self.dims[a] as i64 - 1 {
                covered = false;
                let face = self.min[a] + (hi + 1) as f64 * self.cell;
                bound = bound.min((face - query[a]).max(0.0));
            }
        }
        (!covered).then_some(bound)
    }
}

fn insert_bounded(best: &mut Vec<Neighbor>, cand: Neighbor, k: usize) {
    if best.len() == k && cand.cmp_rank(&best[k - 1]) != Ordering::Less {
        return;
    }
    let pos = best.partition_point(|b| b.cmp_rank(&cand) == Ordering::Less);
    best.insert(pos, cand);
    best.truncate(k);
}

fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        min = min.inf(p);
        max = max.sup(p);
    }
    if points.is_empty() {
        (Vec3::zeros(), Vec3::zeros())
    } else {
        (min, max)
    }
}

fn cell_coords(p: &Vec3, min: &Vec3, cell: f64, dims: &[usize; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| {
        let c = ((p[a] - min[a]) / cell).floor();
        (c.max(0.0) as usize).min(dims[a] - 1)
    })
}

#[inline]
fn flat(c: [usize; 3], dims: &[usize; 3]) -> usize {
    (c[2] * dims[1] + c[1]) * dims[0] + c[0]
}
