use nalgebra::{Point3, Vector3};

use super::mesh::TriMesh;

/// Determinant threshold below which a ray counts as parallel to a triangle.
const PARALLEL_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub triangle: usize,
}

/// Möller–Trumbore intersection; returns the ray parameter of the hit.
pub fn intersect_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < PARALLEL_EPS * e1.norm() * e2.norm() * dir.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// Ray/box slab test; returns the parameter interval inside the box.
pub fn ray_box(origin: &Point3<f64>, dir: &Vector3<f64>, lo: &Point3<f64>, hi: &Point3<f64>) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < lo[k] || origin[k] > hi[k] {
                return None;
            }
            continue;
        }
        let a = (lo[k] - origin[k]) / dir[k];
        let b = (hi[k] - origin[k]) / dir[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t1 >= 0.0).then_some((t0.max(0.0), t1))
}

/// Uniform grid over a mesh's bounding box; each cell lists the triangles
/// whose bounding boxes overlap it.
#[derive(Debug, Clone)]
pub struct Raycaster {
    mesh: TriMesh,
    lo: Point3<f64>,
    hi: Point3<f64>,
    dims: [usize; 3],
    cell: Vector3<f64>,
    cells: Vec<Vec<usize>>,
}

impl Raycaster {
    pub fn new(mesh: TriMesh) -> Self {
        let (lo0, hi0) = mesh.bounds();
        let pad = 1e-9 * (1.0 + (hi0 - lo0).norm());
        let lo = lo0 - Vector3::repeat(pad);
        let hi = hi0 + Vector3::repeat(pad);
        let extent = hi - lo;
        let n = mesh.triangles().len() as f64;
        let volume = extent.x * extent.y * extent.z;
        let density = (2.0 * n / volume).cbrt();
        let dims = [0, 1, 2].map(|k| ((extent[k] * density).ceil() as usize).clamp(1, 64));
        let cell = Vector3::new(
            extent.x / dims[0] as f64,
            extent.y / dims[1] as f64,
            extent.z / dims[2] as f64,
        );
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for i in 0..mesh.triangles().len() {
            let [a, b, c] = mesh.triangle(i);
            let tlo = a.inf(&b).inf(&c);
            let thi = a.sup(&b).sup(&c);
            let r0 = [0, 1, 2].map(|k| Self::coord(tlo[k], lo[k], cell[k], dims[k]));
            let r1 = [0, 1, 2].map(|k| Self::coord(thi[k], lo[k], cell[k], dims[k]));
            for z in r0[2]..=r1[2] {
                for y in r0[1]..=r1[1] {
                    for x in r0[0]..=r1[0] {
                        cells[(z * dims[1] + y) * dims[0] + x].push(i);
                    }
                }
            }
        }
        Self {
            mesh,
            lo,
            hi,
            dims,
            cell,
            cells,
        }
    }

    fn coord(v: f64, lo: f64, size: f64, n: usize) -> usize {
        (((v - lo) / size).floor().max(0.0) as usize).min(n - 1)
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    /// Nearest hit along `origin + t·dir` with `t ≤ max_distance`, ties broken
    /// by triangle index. `dir` need not be unit; distances are in units of it.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_distance: f64) -> Option<Hit> {
        let (t_enter, t_exit) = ray_box(origin, dir, &self.lo, &self.hi)?;
        if t_enter > max_distance {
            return None;
        }
        let entry = origin + dir * t_enter;
        let mut idx = [0, 1, 2].map(|k| Self::coord(entry[k], self.lo[k], self.cell[k], self.dims[k]) as i64);
        let mut step = [0i64; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            if dir[k] > 0.0 {
                step[k] = 1;
                let boundary = self.lo[k] + (idx[k] + 1) as f64 * self.cell[k];
                t_next[k] = (boundary - origin[k]) / dir[k];
                t_delta[k] = self.cell[k] / dir[k];
            } else if dir[k] < 0.0 {
                step[k] = -1;
                let boundary = self.lo[k] + idx[k] as f64 * self.cell[k];
                t_next[k] = (boundary - origin[k]) / dir[k];
                t_delta[k] = -self.cell[k] / dir[k];
            }
        }
        let mut best: Option<Hit> = None;
        loop {
            let cell = (idx[2] as usize * self.dims[1] + idx[1] as usize) * self.dims[0] + idx[0] as usize;
            for &tri in &self.cells[cell] {
                let [a, b, c] = self.mesh.triangle(tri);
                if let Some(t) = intersect_triangle(origin, dir, &a, &b, &c) {
                    let better = match best {
                        None => true,
                        Some(h) => t < h.distance || (t == h.distance && tri < h.triangle),
                    };
                    if t <= max_distance && better {
                        best = Some(Hit { distance: t, triangle: tri });
                    }
                }
            }
            let k = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            let cell_exit = t_next[k];
            // A hit inside the traversed prefix cannot be beaten by later cells.
            if let Some(h) = best {
                if h.distance <= cell_exit {
                    return best;
                }
            }
            if cell_exit > t_exit || cell_exit > max_distance {
                return best;
            }
            idx[k] += step[k];
            if idx[k] < 0 || idx[k] >= self.dims[k] as i64 {
                return best;
            }
            t_next[k] += t_delta[k];
        }
    }

    /// Exhaustive nearest hit; reference for the grid traversal.
    pub fn cast_brute_force(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_distance: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for tri in 0..self.mesh.triangles().len() {
            let [a, b, c] = self.mesh.triangle(tri);
            if let Some(t) = intersect_triangle(origin, dir, &a, &b, &c) {
                if t <= max_distance && best.is_none_or(|h| t < h.distance) {
                    best = Some(Hit { distance: t, triangle: tri });
                }
            }
        }
        best
    }
}

/// Euclidean distance from `p` to triangle `abc`.
pub fn point_triangle_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    // Closest-point regions by barycentric tests.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

/// Distance from `p` to the nearest point of `mesh`.
pub fn point_mesh_distance(p: &Point3<f64>, mesh: &TriMesh) -> f64 {
    (0..mesh.triangles().len())
        .map(|i| {
            let [a, b, c] = mesh.triangle(i);
            point_triangle_distance(p, &a, &b, &c)
        })
        .fold(f64::INFINITY, f64::min)
}
