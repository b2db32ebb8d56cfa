use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{PlanarPose, PointCloud};

/// Triangles smaller than this (m²) are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Indexed triangle mesh in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
}

fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("mesh vertex {i} is not finite")));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::DegenerateInput(format!("triangle {i} references a missing vertex")));
            }
            let area = triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            if area <= MIN_TRIANGLE_AREA {
                return Err(Error::DegenerateInput(format!("triangle {i} has area {area:e}")));
            }
        }
        if triangles.is_empty() {
            return Err(Error::DegenerateInput("mesh has no triangles".into()));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Unnormalized outward normal under counter-clockwise winding.
    pub fn normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                triangle_area(&a, &b, &c)
            })
            .sum()
    }

    /// Signed volume; positive for a closed mesh with outward normals.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.coords.dot(&b.coords.cross(&c.coords)) / 6.0
            })
            .sum()
    }

    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn transformed(&self, pose: &PlanarPose) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Concatenates meshes into one.
    pub fn merged(meshes: &[&TriMesh]) -> Result<TriMesh> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for m in meshes {
            let base = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            triangles.extend(m.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        TriMesh::new(vertices, triangles)
    }

    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(center: Point3<f64>, half: Vector3<f64>) -> Result<TriMesh> {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
            vertices.push(center + Vector3::new(s(1) * half.x, s(2) * half.y, s(4) * half.z));
        }
        // Corner index = x | y << 1 | z << 2.
        let quads = [
            [0, 2, 3, 1], // z-
            [4, 5, 7, 6], // z+
            [0, 1, 5, 4], // y-
            [2, 6, 7, 3], // y+
            [0, 4, 6, 2], // x-
            [1, 3, 7, 5], // x+
        ];
        let mut triangles = Vec::with_capacity(12);
        for q in quads {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        }
        TriMesh::new(vertices, triangles)
    }

    /// Closed prism from a counter-clockwise (x, z) profile, extruded along
    /// y over `[-half_width, half_width]`. `kernel` must see every profile
    /// vertex; the side faces are fans around it.
    pub fn extrude_profile(profile: &[[f64; 2]], kernel: [f64; 2], half_width: f64) -> Result<TriMesh> {
        let n = profile.len();
        if n < 3 {
            return Err(Error::DegenerateInput("profile needs at least 3 vertices".into()));
        }
        let mut vertices = Vec::with_capacity(2 * n + 2);
        for side in [-half_width, half_width] {
            for p in profile {
                vertices.push(Point3::new(p[0], side, p[1]));
            }
        }
        let (kl, kr) = (2 * n, 2 * n + 1);
        vertices.push(Point3::new(kernel[0], -half_width, kernel[1]));
        vertices.push(Point3::new(kernel[0], half_width, kernel[1]));
        let mut triangles = Vec::with_capacity(4 * n);
        for i in 0..n {
            let j = (i + 1) % n;
            triangles.push([kl, i, j]);
            triangles.push([kr, n + j, n + i]);
            triangles.push([i, n + j, j]);
            triangles.push([i, n + i, n + j]);
        }
        TriMesh::new(vertices, triangles)
    }

    /// Area-weighted uniform surface samples.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point3<f64>> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(i);
            total += triangle_area(&a, &b, &c);
            cumulative.push(total);
        }
        (0..n)
            .map(|_| {
                let r = rng.random::<f64>() * total;
                let i = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
                let [a, b, c] = self.triangle(i);
                let (u, v): (f64, f64) = (rng.random(), rng.random());
                let su = u.sqrt();
                let (wa, wb, wc) = (1.0 - su, su * (1.0 - v), su * v);
                Point3::from(a.coords * wa + b.coords * wb + c.coords * wc)
            })
            .collect()
    }

    /// Vertices as a point cloud.
    pub fn vertex_cloud(&self) -> PointCloud {
        PointCloud::new(self.vertices.clone()).expect("mesh vertices are finite")
    }
}

/// Shape parameters of a procedural box-car (meters). The canonical frame has
/// x forward, y left, z up and the ground at z = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCarParams {
    pub length: f64,
    pub width: f64,
    pub body_height: f64,
    pub total_height: f64,
    /// Horizontal and vertical size of the bevel between hood and front face.
    pub hood_bevel: f64,
    /// Cabin footprint as fractions of the length, measured from the rear.
    pub cabin_start: f64,
    pub cabin_end: f64,
    /// Horizontal inset of the cabin roof relative to its footprint.
    pub roof_inset: f64,
}

impl BoxCarParams {
    /// Deterministic variation around a mid-size car.
    pub fn variant<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let length = rng.random_range(3.8..5.2);
        let body_height = rng.random_range(0.75..1.0);
        Self {
            length,
            width: rng.random_range(1.65..2.0),
            body_height,
            total_height: body_height + rng.random_range(0.45..0.75),
            hood_bevel: rng.random_range(0.15..0.35),
            cabin_start: rng.random_range(0.08..0.25),
            cabin_end: rng.random_range(0.6..0.75),
            roof_inset: rng.random_range(0.2..0.45),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length > 0.0
            && self.width > 0.0
            && self.body_height > self.hood_bevel
            && self.total_height > self.body_height
            && 0.0 < self.cabin_start
            && self.cabin_start < self.cabin_end
            && self.cabin_end * self.length < self.length - self.hood_bevel
            && 2.0 * self.roof_inset < (self.cabin_end - self.cabin_start) * self.length;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent box-car parameters {self:?}")))
        }
    }
}

/// Watertight box-car: a lower body with a beveled hood and a trapezoidal
/// cabin, extruded across the width.
pub fn box_car(p: &BoxCarParams) -> Result<TriMesh> {
    p.validate()?;
    let (h, l) = (p.body_height, p.length / 2.0);
    let cab0 = -l + p.cabin_start * p.length;
    let cab1 = -l + p.cabin_end * p.length;
    let profile = [
        [-l, 0.0],
        [l, 0.0],
        [l, h - p.hood_bevel],
        [l - p.hood_bevel, h],
        [cab1, h],
        [cab1 - p.roof_inset, p.total_height],
        [cab0 + p.roof_inset, p.total_height],
        [cab0, h],
        [-l, h],
    ];
    let kernel = [(cab0 + cab1) / 2.0, h * 0.9];
    TriMesh::extrude_profile(&profile, kernel, p.width / 2.0)
}

fn parse_index(token: &str, count: usize, origin: &Path, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head
        .parse()
        .map_err(|_| Error::parse(origin, format!("line {line}: bad face index {token:?}")))?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::parse(origin, format!("line {line}: vertex index {raw} out of range")));
    }
    Ok(idx as usize)
}

/// ASCII OBJ with `v` and `f` records. Polygons are fan-triangulated and
/// zero-area fan triangles are dropped; other record types are ignored.
pub fn parse_obj(text: &str, origin: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut it = raw.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(origin, format!("line {line}: bad vertex")))?;
                if coords.len() != 3 || !coords.iter().all(|c| c.is_finite()) {
                    return Err(Error::parse(origin, format!("line {line}: vertex needs 3 finite coordinates")));
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx = it
                    .map(|t| parse_index(t, vertices.len(), origin, line))
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(origin, format!("line {line}: face needs at least 3 vertices")));
                }
                for k in 1..idx.len() - 1 {
                    let t = [idx[0], idx[k], idx[k + 1]];
                    if triangle_area(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]) > MIN_TRIANGLE_AREA {
                        triangles.push(t);
                    }
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(Error::DegenerateInput(format!("{} has no usable faces", origin.display())));
    }
    TriMesh::new(vertices, triangles)
}

pub fn load_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// OBJ text for a mesh (1-based indices).
pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    s
}
