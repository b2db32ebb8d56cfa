use nalgebra::{Point3, Vector3};

use super::mesh::TriMesh;
use super::raycast::Raycaster;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::rng_for;

pub const VIEWPOINTS: usize = 42;
pub const MAX_ROUNDS: usize = 10;

/// Unit directions of a once-subdivided icosahedron (12 vertices plus 30 edge
/// midpoints).
pub fn icosphere_directions() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = Vec::with_capacity(VIEWPOINTS);
    for a in [-1.0, 1.0] {
        for b in [-phi, phi] {
            v.push(Vector3::new(0.0, a, b));
            v.push(Vector3::new(a, b, 0.0));
            v.push(Vector3::new(b, 0.0, a));
        }
    }
    let edge = 2.0;
    let n = v.len();
    for i in 0..n {
        for j in i + 1..n {
            if ((v[i] - v[j]).norm() - edge).abs() < 1e-9 {
                v.push((v[i] + v[j]) / 2.0);
            }
        }
    }
    v.iter().map(|d| d.normalize()).collect()
}

/// Viewpoint positions on a sphere around the mesh.
pub fn viewpoints(mesh: &TriMesh) -> Vec<Point3<f64>> {
    let (lo, hi) = mesh.bounds();
    let center = Point3::from((lo.coords + hi.coords) / 2.0);
    let radius = 2.0 * (hi - lo).norm().max(1e-6);
    icosphere_directions().into_iter().map(|d| center + d * radius).collect()
}

/// True when `p` is the first surface hit seen from at least one viewpoint.
fn visible(raycaster: &Raycaster, views: &[Point3<f64>], p: &Point3<f64>, tol: f64) -> bool {
    views.iter().any(|v| {
        let d = p - v;
        let dist = d.norm();
        let dir = d / dist;
        match raycaster.cast(v, &dir, dist + tol) {
            Some(hit) => hit.distance >= dist - tol,
            None => false,
        }
    })
}

/// Area-weighted surface samples with interior points removed: a candidate
/// survives when one of the 42 surrounding viewpoints sees it first. Batches
/// of `n` candidates are drawn until `n` survivors exist.
pub fn sample_complete(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::DegenerateInput("sample_complete needs n >= 1".into()));
    }
    let raycaster = Raycaster::new(mesh.clone());
    let views = viewpoints(mesh);
    let (lo, hi) = mesh.bounds();
    let tol = 1e-9 * (1.0 + (hi - lo).norm());
    let mut kept = Vec::with_capacity(n);
    for round in 0..MAX_ROUNDS {
        let mut rng = rng_for(seed, 0xC0_0000 + round as u64);
        for p in mesh.sample_surface(n, &mut rng) {
            if visible(&raycaster, &views, &p, tol) {
                kept.push(p);
                if kept.len() == n {
                    return PointCloud::new(kept);
                }
            }
        }
    }
    Err(Error::DegenerateInput(format!(
        "only {} of {n} samples visible after {MAX_ROUNDS} rounds",
        kept.len()
    )))
}
