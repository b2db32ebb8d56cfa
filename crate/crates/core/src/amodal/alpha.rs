use std::collections::{BTreeMap, HashSet};

use super::delaunay::{circumradius, triangulate};
use crate::error::Result;

pub const DEFAULT_ALPHA: f64 = 15.0;

/// Simple polygon ring in pixel coordinates, without a repeated closing vertex.
pub type Ring = Vec<[f64; 2]>;

/// Counter-clockwise outer ring with clockwise holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub outer: Ring,
    pub holes: Vec<Ring>,
}

pub fn signed_area(ring: &[[f64; 2]]) -> f64 {
    let mut a = 0.0;
    for i in 0..ring.len() {
        let (p, q) = (ring[i], ring[(i + 1) % ring.len()]);
        a += p[0] * q[1] - q[0] * p[1];
    }
    a / 2.0
}

impl Polygon {
    /// Outer area minus hole areas.
    pub fn area(&self) -> f64 {
        signed_area(&self.outer).abs() - self.holes.iter().map(|h| signed_area(h).abs()).sum::<f64>()
    }

    /// Even-odd containment over the outer ring and holes.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        std::iter::once(&self.outer)
            .chain(&self.holes)
            .filter(|r| ring_contains(r, p))
            .count()
            % 2
            == 1
    }
}

/// Crossing-number test against one ring.
pub fn ring_contains(ring: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Chains directed boundary edges into closed rings. At a vertex with several
/// outgoing edges the sharpest left turn is taken, which keeps rings that
/// touch at a point separate.
fn chain_rings(points: &[[f64; 2]], edges: &[(usize, usize)]) -> Vec<Ring> {
    let mut outgoing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in edges {
        outgoing.entry(a).or_default().push(b);
    }
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut rings = Vec::new();
    for &(a0, b0) in edges {
        if used.contains(&(a0, b0)) {
            continue;
        }
        let mut ring = vec![points[a0]];
        used.insert((a0, b0));
        let (mut prev, mut cur) = (a0, b0);
        while cur != a0 {
            ring.push(points[cur]);
            let candidates: Vec<usize> = outgoing[&cur].iter().copied().filter(|&n| !used.contains(&(cur, n))).collect();
            let next = if candidates.len() == 1 {
                candidates[0]
            } else {
                let din = [points[cur][0] - points[prev][0], points[cur][1] - points[prev][1]];
                let turn = |n: usize| {
                    let d = [points[n][0] - points[cur][0], points[n][1] - points[cur][1]];
                    let cross = din[0] * d[1] - din[1] * d[0];
                    let dot = din[0] * d[0] + din[1] * d[1];
                    cross.atan2(dot)
                };
                *candidates
                    .iter()
                    .max_by(|&&x, &&y| turn(x).total_cmp(&turn(y)).then(y.cmp(&x)))
                    .expect("boundary edges form closed loops")
            };
            used.insert((cur, next));
            prev = cur;
            cur = next;
        }
        rings.push(ring);
    }
    rings
}

/// Groups rings into polygons: counter-clockwise rings are outers, clockwise
/// rings are holes of the smallest outer containing them.
pub fn assemble_polygons(rings: Vec<Ring>) -> Vec<Polygon> {
    let (outers, holes): (Vec<Ring>, Vec<Ring>) = rings.into_iter().partition(|r| signed_area(r) > 0.0);
    let mut polys: Vec<Polygon> = outers.into_iter().map(|outer| Polygon { outer, holes: Vec::new() }).collect();
    for hole in holes {
        // Probe just inside the hole, next to its first edge.
        let (a, b) = (hole[0], hole[1 % hole.len()]);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt().max(1e-12);
        let probe = [mid[0] + (b[1] - a[1]) / len * 1e-6, mid[1] - (b[0] - a[0]) / len * 1e-6];
        let owner = polys
            .iter()
            .enumerate()
            .filter(|(_, p)| ring_contains(&p.outer, probe))
            .min_by(|x, y| signed_area(&x.1.outer).total_cmp(&signed_area(&y.1.outer)))
            .map(|(i, _)| i);
        if let Some(i) = owner {
            polys[i].holes.push(hole);
        }
    }
    polys
}

/// Alpha shape: Delaunay triangles with circumradius ≤ `alpha` (pixels),
/// returned as the boundary polygons of their union.
pub fn alpha_shape_2d(points: &[[f64; 2]], alpha: f64) -> Result<Vec<Polygon>> {
    let tri = triangulate(points)?;
    let kept: Vec<[usize; 3]> = tri
        .triangles
        .iter()
        .copied()
        .filter(|&[a, b, c]| circumradius(tri.points[a], tri.points[b], tri.points[c]) <= alpha)
        .collect();
    let directed: HashSet<(usize, usize)> = kept
        .iter()
        .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
        .collect();
    let mut boundary: Vec<(usize, usize)> = directed.iter().copied().filter(|&(a, b)| !directed.contains(&(b, a))).collect();
    boundary.sort_unstable();
    Ok(assemble_polygons(chain_rings(&tri.points, &boundary)))
}

/// Alpha shape with an unbounded radius: the convex hull.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<Vec<Polygon>> {
    alpha_shape_2d(points, f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn square_corners_give_the_square() {
        let polys = alpha_shape_2d(&[[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]], 1e3).unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].outer.len(), 4);
        assert_eq!(polys[0].area(), 100.0);
        assert!(polys[0].holes.is_empty());
    }

    #[test]
    fn separated_clusters_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        for cx in [50.0, 150.0] {
            for _ in 0..60 {
                pts.push([cx + rng.random_range(-8.0..8.0), 50.0 + rng.random_range(-8.0..8.0)]);
            }
        }
        let polys = alpha_shape_2d(&pts, 20.0).unwrap();
        assert_eq!(polys.len(), 2);
        assert!(polys.iter().any(|p| p.contains([50.0, 50.0])));
        assert!(polys.iter().any(|p| p.contains([150.0, 50.0])));
        assert!(!polys.iter().any(|p| p.contains([100.0, 50.0])));
    }

    #[test]
    fn ring_keeps_its_hole() {
        let mut pts = Vec::new();
        for r in [40.0, 43.0, 46.0, 49.0] {
            for k in 0..120 {
                let a = 2.0 * PI * k as f64 / 120.0;
                pts.push([100.0 + r * a.cos(), 100.0 + r * a.sin()]);
            }
        }
        // Spacing is about 2.5 px along the ring and 3 px across it.
        let polys = alpha_shape_2d(&pts, 4.0).unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].holes.len(), 1);
        assert!(!polys[0].contains([100.0, 100.0]));
        assert!(polys[0].contains([144.5, 100.0]));
    }

    #[test]
    fn tiny_alpha_keeps_nothing() {
        let polys = alpha_shape_2d(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 1.0).unwrap();
        assert!(polys.is_empty());
        assert!(matches!(alpha_shape_2d(&[[0.0, 0.0], [1.0, 0.0]], 1.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn pinched_triangles_stay_separate_rings() {
        // Two triangles of circumradius 12.5 touching at (20, 10); the other
        // two have circumradius 25.
        let pts = [[0.0, 0.0], [0.0, 20.0], [20.0, 10.0], [40.0, 0.0], [40.0, 20.0]];
        let polys = alpha_shape_2d(&pts, 13.0).unwrap();
        assert_eq!(polys.len(), 2);
        let total: f64 = polys.iter().map(Polygon::area).sum();
        assert!((total - 400.0).abs() < 1e-9, "{polys:?}");
    }
}
