//! Point clouds, planar rigid transforms and the cloud-level operations of the
//! estimation pipeline: demeaning, re-attachment, accumulation and mirroring.

mod ply;

use std::f64::consts::PI;

use nalgebra::{Matrix4, Point3, Vector2, Vector3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ply::{decode_ply, encode_ply, read_ply, write_ply};

/// Ordered list of finite 3D points in meters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
}

impl PointCloud {
    /// Builds a cloud, rejecting NaN or infinite coordinates.
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} of cloud is not finite")));
        }
        Ok(Self { points })
    }

    pub fn from_xyz(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    pub(crate) fn from_vec_unchecked(points: Vec<Point3<f64>>) -> Self {
        debug_assert!(points.iter().all(|p| p.coords.iter().all(|c| c.is_finite())));
        Self { points }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3<f64>> {
        self.points.iter()
    }

    pub fn into_points(self) -> Vec<Point3<f64>> {
        self.points
    }

    /// Row-major `n x 3` buffer, the layout the autodiff engine consumes.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_row_major(data: &[f64]) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values is not a list of 3D points",
                data.len()
            )));
        }
        Self::new(data.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> Self {
        Self::from_vec_unchecked(self.points.iter().map(|p| p + delta).collect())
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    /// Arithmetic mean; `None` for an empty cloud.
    pub fn mean(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(sum / self.points.len() as f64)
    }

    /// Resamples to exactly `n` points: uniform with replacement when the cloud
    /// is smaller than `n`, uniform without replacement when larger, unchanged
    /// when equal.
    pub fn resample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Self> {
        if self.points.is_empty() {
            return Err(Error::DegenerateInput("cannot resample an empty cloud".into()));
        }
        let m = self.points.len();
        let points = match m.cmp(&n) {
            std::cmp::Ordering::Equal => self.points.clone(),
            std::cmp::Ordering::Less => (0..n).map(|_| self.points[rng.random_range(0..m)]).collect(),
            std::cmp::Ordering::Greater => {
                let mut picked = index::sample(rng, m, n).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| self.points[i]).collect()
            }
        };
        Ok(Self::from_vec_unchecked(points))
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point3<f64>;
    type IntoIter = std::slice::Iter<'a, Point3<f64>>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Rigid motion restricted to a rotation about the vertical axis, a planar
/// translation and a fixed vertical offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarPose {
    pub theta: f64,
    pub t: [f64; 2],
    #[serde(rename = "z", default)]
    pub z_offset: f64,
}

impl Default for PlanarPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl PlanarPose {
    pub fn new(theta: f64, tx: f64, ty: f64) -> Self {
        Self {
            theta: wrap_angle(theta),
            t: [tx, ty],
            z_offset: 0.0,
        }
    }

    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            t: [0.0, 0.0],
            z_offset: 0.0,
        }
    }

    pub fn with_z(mut self, z_offset: f64) -> Self {
        self.z_offset = z_offset;
        self
    }

    pub fn translation(delta: &Vector3<f64>) -> Self {
        Self {
            theta: 0.0,
            t: [delta.x, delta.y],
            z_offset: delta.z,
        }
    }

    pub fn translation_xy(&self) -> Vector2<f64> {
        Vector2::new(self.t[0], self.t[1])
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        let (s, c) = self.theta.sin_cos();
        Point3::new(
            c * p.x - s * p.y + self.t[0],
            s * p.x + c * p.y + self.t[1],
            p.z + self.z_offset,
        )
    }

    /// Rotate about the vertical axis by `theta`, then translate.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_vec_unchecked(cloud.iter().map(|p| self.transform_point(p)).collect())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PlanarPose) -> PlanarPose {
        let (s, c) = self.theta.sin_cos();
        PlanarPose {
            theta: wrap_angle(self.theta + other.theta),
            t: [
                c * other.t[0] - s * other.t[1] + self.t[0],
                s * other.t[0] + c * other.t[1] + self.t[1],
            ],
            z_offset: self.z_offset + other.z_offset,
        }
    }

    pub fn inverse(&self) -> PlanarPose {
        let (s, c) = self.theta.sin_cos();
        PlanarPose {
            theta: wrap_angle(-self.theta),
            t: [-(c * self.t[0] + s * self.t[1]), -(-s * self.t[0] + c * self.t[1])],
            z_offset: -self.z_offset,
        }
    }

    /// Homogeneous 4x4 view of the pose.
    pub fn matrix(&self) -> Matrix4<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix4::new(
            c, -s, 0.0, self.t[0], //
            s, c, 0.0, self.t[1], //
            0.0, 0.0, 1.0, self.z_offset, //
            0.0, 0.0, 0.0, 1.0,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.t.iter().all(|v| v.is_finite()) && self.z_offset.is_finite()
    }
}

/// Mean of the measurement a demeaned cloud was shifted by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub mean: Vector3<f64>,
}

impl Centroid {
    pub fn zero() -> Self {
        Self {
            mean: Vector3::zeros(),
        }
    }
}

/// Shifts a measurement to zero mean, returning the shifted cloud and the mean.
pub fn demean(cloud: &PointCloud) -> Result<(PointCloud, Centroid)> {
    let mean = cloud
        .mean()
        .ok_or_else(|| Error::DegenerateInput("cannot demean an empty cloud".into()))?;
    Ok((cloud.translated(&-mean), Centroid { mean }))
}

/// Brings a cloud and pose estimated in the demeaned frame back to the
/// measurement frame: points are shifted by the mean, the pose is
/// left-composed with the pure translation by the mean.
pub fn reattach(cloud: &PointCloud, pose: &PlanarPose, centroid: &Centroid) -> (PointCloud, PlanarPose) {
    (
        cloud.translated(&centroid.mean),
        PlanarPose::translation(&centroid.mean).compose(pose),
    )
}

/// Returns the input followed by its reflection across the vertical plane that
/// contains the pose's heading (local x) axis. Points close to the plane are
/// kept twice.
pub fn mirror_about_heading(cloud: &PointCloud, pose: &PlanarPose) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::DegenerateInput("cannot mirror an empty cloud".into()));
    }
    let (s, c) = pose.theta.sin_cos();
    let heading = Vector2::new(c, s);
    let origin = pose.translation_xy();
    let mut points = Vec::with_capacity(cloud.len() * 2);
    points.extend_from_slice(cloud.points());
    points.extend(cloud.iter().map(|p| {
        let v = Vector2::new(p.x, p.y) - origin;
        let r = heading * (2.0 * v.dot(&heading)) - v + origin;
        Point3::new(r.x, r.y, p.z)
    }));
    Ok(PointCloud::from_vec_unchecked(points))
}

/// Maps each frame into the canonical frame via the inverse of its pose and
/// concatenates the results.
pub fn accumulate(frames: &[PointCloud], poses: &[PlanarPose]) -> Result<PointCloud> {
    if frames.len() != poses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames but {} poses",
            frames.len(),
            poses.len()
        )));
    }
    if frames.is_empty() {
        return Err(Error::DegenerateInput("nothing to accumulate".into()));
    }
    let mut out = PointCloud::empty();
    for (frame, pose) in frames.iter().zip(poses) {
        out.extend(&pose.inverse().apply(frame));
    }
    Ok(out)
}
