use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
/// Super-triangle size relative to the input extent.
const SUPER_SCALE: f64 = 1e4;

/// Delaunay triangulation of distinct 2D points; triangles are
/// counter-clockwise index triples into `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    pub points: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy)]
struct Tri {
    v: [usize; 3],
    /// `n[i]` is the neighbor across the edge opposite `v[i]`.
    n: [usize; 3],
    alive: bool,
}

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    orient2d(coord(a), coord(b), coord(c))
}

/// Sorted, exact-duplicate-free copy of `points`.
pub fn distinct_points(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    pts
}

/// Insertion order along a serpentine walk over a coarse grid, so that
/// point location walks stay short.
fn insertion_order(pts: &[[f64; 2]], lo: [f64; 2], size: f64) -> Vec<usize> {
    let cells = ((pts.len() as f64).sqrt().ceil() as usize).max(1);
    let key = |p: &[f64; 2]| {
        let cx = (((p[0] - lo[0]) / size * cells as f64) as usize).min(cells - 1);
        let cy = (((p[1] - lo[1]) / size * cells as f64) as usize).min(cells - 1);
        let x = if cy % 2 == 0 { cx } else { cells - 1 - cx };
        cy * cells + x
    };
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by_key(|&i| (key(&pts[i]), i));
    order
}

/// Bowyer–Watson triangulation on exact orientation and in-circle predicates.
/// Duplicate points are merged; fewer than 3 distinct or all-collinear
/// points are rejected.
pub fn triangulate(points: &[[f64; 2]]) -> Result<Triangulation> {
    if let Some(p) = points.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite(format!("triangulation input {p:?}")));
    }
    let pts = distinct_points(points);
    if pts.len() < 3 {
        return Err(Error::DegenerateInput(format!("{} distinct points cannot be triangulated", pts.len())));
    }
    if pts[2..].iter().all(|&p| orient(pts[0], pts[1], p) == 0.0) {
        return Err(Error::DegenerateInput("all points are collinear".into()));
    }
    let n = pts.len();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let size = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let m = SUPER_SCALE * size;
    let mut all = pts.clone();
    all.push([center[0] - 2.0 * m, center[1] - m]);
    all.push([center[0] + 2.0 * m, center[1] - m]);
    all.push([center[0], center[1] + 2.0 * m]);
    let mut tris = vec![Tri {
        v: [n, n + 1, n + 2],
        n: [NONE; 3],
        alive: true,
    }];
    let mut last = 0usize;
    let mut bad: Vec<usize> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut mark: Vec<u32> = vec![0];
    let mut boundary: Vec<(usize, usize, usize)> = Vec::new();

    for (round, &pi) in insertion_order(&pts, lo, size).iter().enumerate() {
        let p = all[pi];
        let stamp = round as u32 + 1;
        // Visibility walk to a triangle containing p.
        let mut t = last;
        let mut guard = 0usize;
        'walk: loop {
            guard += 1;
            if guard > 4 * tris.len() + 16 {
                // Fall back to a scan; cannot happen on a valid triangulation.
                t = (0..tris.len())
                    .find(|&i| {
                        let v = tris[i].v;
                        tris[i].alive && (0..3).all(|e| orient(all[v[(e + 1) % 3]], all[v[(e + 2) % 3]], p) >= 0.0)
                    })
                    .expect("point lies inside the super triangle");
                break;
            }
            let tri = tris[t];
            for k in 0..3 {
                let e = (k + round) % 3;
                let (a, b) = (all[tri.v[(e + 1) % 3]], all[tri.v[(e + 2) % 3]]);
                if orient(a, b, p) < 0.0 && tri.n[e] != NONE {
                    t = tri.n[e];
                    continue 'walk;
                }
            }
            break;
        }
        // Cavity of triangles whose circumcircle contains p.
        bad.clear();
        boundary.clear();
        stack.clear();
        stack.push(t);
        mark[t] = stamp;
        while let Some(b) = stack.pop() {
            bad.push(b);
            let tri = tris[b];
            for e in 0..3 {
                let nb = tri.n[e];
                let inside = nb != NONE
                    && (mark[nb] == stamp || {
                        let v = tris[nb].v;
                        incircle(coord(all[v[0]]), coord(all[v[1]]), coord(all[v[2]]), coord(p)) > 0.0
                    });
                if inside {
                    if mark[nb] != stamp {
                        mark[nb] = stamp;
                        stack.push(nb);
                    }
                } else {
                    boundary.push((tri.v[(e + 1) % 3], tri.v[(e + 2) % 3], nb));
                }
            }
        }
        for &b in &bad {
            tris[b].alive = false;
        }
        // Fan the cavity boundary around p.
        let first = tris.len();
        let mut by_start = std::collections::HashMap::with_capacity(boundary.len());
        for (k, &(a, b, outer)) in boundary.iter().enumerate() {
            let id = first + k;
            by_start.insert(a, id);
            tris.push(Tri {
                v: [a, b, pi],
                n: [NONE, NONE, outer],
                alive: true,
            });
            mark.push(0);
            if outer != NONE {
                let o = &mut tris[outer];
                for e in 0..3 {
                    let (x, y) = (o.v[(e + 1) % 3], o.v[(e + 2) % 3]);
                    if x == b && y == a {
                        o.n[e] = id;
                    }
                }
            }
        }
        for k in 0..boundary.len() {
            let id = first + k;
            let next = by_start[&tris[id].v[1]];
            tris[id].n[0] = next;
            tris[next].n[1] = id;
        }
        last = first;
    }
    let triangles = tris
        .iter()
        .filter(|t| t.alive && t.v.iter().all(|&v| v < n))
        .map(|t| t.v)
        .collect();
    Ok(Triangulation { points: pts, triangles })
}

/// Circumradius of triangle `abc`; infinite for collinear points.
pub fn circumradius(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let bc = ((c[0] - b[0]).powi(2) + (c[1] - b[1]).powi(2)).sqrt();
    let ca = ((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2)).sqrt();
    let area2 = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
    if area2 == 0.0 {
        f64::INFINITY
    } else {
        ab * bc * ca / (2.0 * area2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn area(t: &Triangulation) -> f64 {
        t.triangles
            .iter()
            .map(|&[a, b, c]| orient(t.points[a], t.points[b], t.points[c]) / 2.0)
            .sum()
    }

    fn hull_area(points: &[[f64; 2]]) -> f64 {
        // Monotone chain.
        let pts = distinct_points(points);
        let mut hull: Vec<[f64; 2]> = Vec::new();
        for pass in 0..2 {
            let start = hull.len();
            let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
                if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
            for &p in iter {
                while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                    hull.pop();
                }
                hull.push(p);
            }
            hull.pop();
        }
        let mut a = 0.0;
        for i in 0..hull.len() {
            let (p, q) = (hull[i], hull[(i + 1) % hull.len()]);
            a += p[0] * q[1] - q[0] * p[1];
        }
        a / 2.0
    }

    #[test]
    fn square_gives_two_triangles() {
        let t = triangulate(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(t.points.len(), 4);
        assert_eq!(t.triangles.len(), 2);
        assert_eq!(area(&t), 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(triangulate(&[[0.0, 0.0], [1.0, 1.0]]), Err(Error::DegenerateInput(_))));
        assert!(matches!(
            triangulate(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(triangulate(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]), Ok(_)));
    }

    #[test]
    fn random_sets_are_delaunay_and_cover_the_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..20 {
            let n = 3 + case * 7;
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    // Snapped coordinates create many cocircular and collinear quadruples.
                    let s = if case % 2 == 0 { 1.0 } else { 0.25 };
                    [(rng.random_range(0.0..40.0f64) / s).round() * s, (rng.random_range(0.0..30.0f64) / s).round() * s]
                })
                .collect();
            let Ok(t) = triangulate(&pts) else { continue };
            assert!(t.triangles.iter().all(|&[a, b, c]| orient(t.points[a], t.points[b], t.points[c]) > 0.0));
            assert!((area(&t) - hull_area(&pts)).abs() < 1e-6, "case {case}");
            for &[a, b, c] in &t.triangles {
                for (i, &p) in t.points.iter().enumerate() {
                    if i != a && i != b && i != c {
                        let v = incircle(coord(t.points[a]), coord(t.points[b]), coord(t.points[c]), coord(p));
                        assert!(v <= 0.0, "case {case}: point {i} inside circumcircle");
                    }
                }
            }
        }
    }

    #[test]
    fn large_input_is_fast_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 2]> = (0..20_000).map(|_| [rng.random_range(0.0..500.0), rng.random_range(0.0..400.0)]).collect();
        let t = triangulate(&pts).unwrap();
        assert!((area(&t) - hull_area(&pts)).abs() < 1e-6 * hull_area(&pts));
    }

    #[test]
    fn circumradius_of_right_triangle() {
        assert!((circumradius([0.0, 0.0], [6.0, 0.0], [0.0, 8.0]) - 5.0).abs() < 1e-12);
        assert_eq!(circumradius([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]), f64::INFINITY);
    }
}
