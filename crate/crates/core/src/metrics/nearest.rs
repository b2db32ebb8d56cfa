//! Exact nearest-neighbor distances: brute force for small clouds, a uniform
//! grid hash for large ones. Both return bit-identical distances.

use std::collections::HashMap;

use nalgebra::Point3;

/// Above this many target points the grid is used.
pub const BRUTE_FORCE_LIMIT: usize = 4096;

/// Distance from each query point to its nearest target point, in query order.
pub fn nearest_distances(queries: &[Point3<f64>], targets: &[Point3<f64>]) -> Vec<f64> {
    if targets.len() <= BRUTE_FORCE_LIMIT && queries.len() <= BRUTE_FORCE_LIMIT {
        queries.iter().map(|q| brute_nearest(q, targets).1).collect()
    } else {
        let grid = Grid::build(targets);
        queries.iter().map(|q| grid.nearest(q).1).collect()
    }
}

/// Lowest index wins ties.
pub fn brute_nearest(query: &Point3<f64>, targets: &[Point3<f64>]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, t) in targets.iter().enumerate() {
        let d = (query - t).norm();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

struct Grid<'a> {
    points: &'a [Point3<f64>],
    origin: Point3<f64>,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    key_lo: [i64; 3],
    key_hi: [i64; 3],
}

impl<'a> Grid<'a> {
    fn build(points: &'a [Point3<f64>]) -> Self {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).max().max(1e-9);
        // Roughly two points per occupied cell for surface-like clouds.
        let cell = (extent / (points.len() as f64 / 2.0).sqrt().max(1.0)).max(1e-9);
        let mut grid = Self {
            points,
            origin: lo,
            cell,
            cells: HashMap::new(),
            key_lo: [i64::MAX; 3],
            key_hi: [i64::MIN; 3],
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(p);
            for a in 0..3 {
                grid.key_lo[a] = grid.key_lo[a].min(key[a]);
                grid.key_hi[a] = grid.key_hi[a].max(key[a]);
            }
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: &Point3<f64>) -> [i64; 3] {
        let r = (p - self.origin) / self.cell;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let center = self.key(q);
        let mut best = (usize::MAX, f64::INFINITY);
        // Rings closer than the occupied key box are empty.
        let mut ring = (0..3)
            .map(|a| (self.key_lo[a] - center[a]).max(center[a] - self.key_hi[a]).max(0))
            .max()
            .unwrap_or(0);
        let range = |a: usize, r: i64| (center[a] - r).max(self.key_lo[a])..=(center[a] + r).min(self.key_hi[a]);
        loop {
            for kx in range(0, ring) {
                for ky in range(1, ring) {
                    for kz in range(2, ring) {
                        let key = [kx, ky, kz];
                        let cheb = (0..3).map(|a| (key[a] - center[a]).abs()).max().unwrap_or(0);
                        if cheb != ring {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&key) {
                            for &i in ids {
                                let d = (q - self.points[i]).norm();
                                if d < best.1 || (d == best.1 && i < best.0) {
                                    best = (i, d);
                                }
                            }
                        }
                    }
                }
            }
            // Any cell in ring r+1 is at least r cells away from q.
            if best.1 <= ring as f64 * self.cell {
                return best;
            }
            ring += 1;
        }
    }
}
