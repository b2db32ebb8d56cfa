use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Pinhole camera. `extrinsic` is the row-major 4x4 camera-to-world
/// transform; the camera looks down +z with x right and y down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
    pub extrinsic: [f64; 16],
}

/// One projected point. `u`, `v` are meaningful only when `in_front`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub in_front: bool,
    pub in_image: bool,
}

impl CameraModel {
    /// Camera at `eye` looking at `target` with world +z up.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, fx: f64, fy: f64, w: usize, h: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("camera eye and target coincide".into()))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("camera cannot look straight up or down".into()))?;
        let down = forward.cross(&right);
        let mut m = Matrix4::identity();
        for r in 0..3 {
            m[(r, 0)] = right[r];
            m[(r, 1)] = down[r];
            m[(r, 2)] = forward[r];
            m[(r, 3)] = eye[r];
        }
        let cam = Self {
            fx,
            fy,
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            w,
            h,
            extrinsic: std::array::from_fn(|i| m[(i / 4, i % 4)]),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn camera_to_world(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.extrinsic)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.camera_to_world().fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::new(self.extrinsic[3], self.extrinsic[7], self.extrinsic[11])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.fx) || !positive(self.fy) {
            return Err(Error::Config("camera fx and fy must be positive".into()));
        }
        if self.w == 0 || self.h == 0 {
            return Err(Error::Config("camera w and h must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.w as f64 && self.cy >= 0.0 && self.cy < self.h as f64) {
            return Err(Error::Config("camera principal point must lie inside the image".into()));
        }
        if !self.extrinsic.iter().all(|v| v.is_finite()) || self.extrinsic[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Config("camera extrinsic must be finite with last row 0 0 0 1".into()));
        }
        let r = self.rotation();
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-6 || r.determinant() <= 0.0 {
            return Err(Error::Config("camera extrinsic rotation must be orthonormal and right-handed".into()));
        }
        Ok(())
    }

    /// World point in camera coordinates.
    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        let r = self.rotation();
        Point3::from(r.transpose() * (p - self.position()))
    }

    pub fn project_point(&self, p: &Point3<f64>) -> Projection {
        let c = self.to_camera(p);
        let in_front = c.z > 0.0;
        let (u, v) = if in_front {
            (self.cx + self.fx * c.x / c.z, self.cy + self.fy * c.y / c.z)
        } else {
            (f64::NAN, f64::NAN)
        };
        let in_image = in_front && u >= 0.0 && v >= 0.0 && u <= (self.w - 1) as f64 && v <= (self.h - 1) as f64;
        Projection {
            u,
            v,
            depth: c.z,
            in_front,
            in_image,
        }
    }

    /// Projects every point; nothing is dropped.
    pub fn project(&self, cloud: &PointCloud) -> Vec<Projection> {
        cloud.iter().map(|p| self.project_point(p)).collect()
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cam: Self = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
