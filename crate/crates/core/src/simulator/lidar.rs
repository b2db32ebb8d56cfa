use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use super::raycast::Raycaster;
use crate::error::{Error, Result};
use crate::geometry::{PlanarPose, PointCloud};
use crate::rng::rng_for;

/// Range noise is truncated at this many standard deviations.
pub const NOISE_TRUNCATION: f64 = 4.0;

/// Spinning multi-beam range sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    #[serde(default = "default_elevations")]
    pub elevations_deg: Vec<f64>,
    #[serde(default = "default_azimuth_step")]
    pub azimuth_step_deg: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Inclusive azimuth window in degrees; the full circle by default.
    #[serde(default = "default_window")]
    pub azimuth_window_deg: [f64; 2],
}

fn default_elevations() -> Vec<f64> {
    (0..16).map(|i| -15.0 + 2.0 * i as f64).collect()
}
fn default_azimuth_step() -> f64 {
    0.4
}
fn default_max_range() -> f64 {
    100.0
}
fn default_height() -> f64 {
    2.0
}
fn default_noise() -> f64 {
    0.01
}
fn default_window() -> [f64; 2] {
    [-180.0, 180.0]
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            elevations_deg: default_elevations(),
            azimuth_step_deg: default_azimuth_step(),
            max_range: default_max_range(),
            height: default_height(),
            noise_sigma: default_noise(),
            azimuth_window_deg: default_window(),
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        if self.elevations_deg.is_empty() {
            return Err(Error::Config("lidar.elevations_deg must not be empty".into()));
        }
        if self.elevations_deg.windows(2).any(|w| w[1] <= w[0]) || self.elevations_deg.iter().any(|e| e.abs() >= 90.0) {
            return Err(Error::Config(
                "lidar.elevations_deg must strictly increase within (-90, 90)".into(),
            ));
        }
        let steps = 360.0 / self.azimuth_step_deg;
        if !(self.azimuth_step_deg > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "lidar.azimuth_step_deg = {} does not divide 360",
                self.azimuth_step_deg
            )));
        }
        if !(self.max_range > 0.0) || !self.height.is_finite() || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(
                "lidar.max_range must be positive, height finite and noise_sigma non-negative".into(),
            ));
        }
        let [a, b] = self.azimuth_window_deg;
        if !(a <= b) {
            return Err(Error::Config("lidar.azimuth_window_deg must be [min, max]".into()));
        }
        Ok(())
    }

    pub fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    /// Azimuths (degrees, wrapped to [-180, 180)) inside the window.
    pub fn azimuths_deg(&self) -> Vec<f64> {
        let [a, b] = self.azimuth_window_deg;
        (0..self.azimuth_count())
            .map(|k| {
                let az = k as f64 * self.azimuth_step_deg;
                if az >= 180.0 {
                    az - 360.0
                } else {
                    az
                }
            })
            .filter(|az| *az >= a && *az <= b)
            .collect()
    }

    /// Unit ray directions in the sensor frame, beam-major.
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        let azimuths = self.azimuths_deg();
        let mut out = Vec::with_capacity(self.elevations_deg.len() * azimuths.len());
        for &el in &self.elevations_deg {
            let (se, ce) = el.to_radians().sin_cos();
            for &az in &azimuths {
                let (sa, ca) = az.to_radians().sin_cos();
                out.push(Vector3::new(ce * ca, ce * sa, se));
            }
        }
        out
    }

    /// Maps the canonical frame of a ground-standing object at planar world
    /// pose `vehicle` into the sensor frame.
    pub fn sensor_pose(&self, vehicle: &PlanarPose) -> PlanarPose {
        vehicle.with_z(vehicle.z_offset - self.height)
    }
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= NOISE_TRUNCATION {
            return v;
        }
    }
}

/// Scans `raycaster`'s mesh (already in the sensor frame) from the origin.
pub fn scan_prepared(raycaster: &Raycaster, lidar: &LidarModel, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed, 0x11DA);
    let origin = Point3::origin();
    let mut points = Vec::new();
    for dir in lidar.directions() {
        if let Some(hit) = raycaster.cast(&origin, &dir, lidar.max_range) {
            let range = if lidar.noise_sigma > 0.0 {
                hit.distance + lidar.noise_sigma * truncated_normal(&mut rng)
            } else {
                hit.distance
            };
            points.push(origin + dir * range);
        }
    }
    PointCloud::new(points).expect("ray hits are finite")
}

/// One sweep of `mesh` placed by `pose` (canonical → sensor frame), with the
/// sensor at the origin. Hits only; misses produce no point.
pub fn raycast_scan(mesh: &TriMesh, pose: &PlanarPose, lidar: &LidarModel, seed: u64) -> PointCloud {
    scan_prepared(&Raycaster::new(mesh.transformed(pose)), lidar, seed)
}

/// One sweep over several meshes (already in the sensor frame) that occlude
/// each other; returns the hits on each mesh separately.
pub fn scan_scene(meshes: &[&TriMesh], lidar: &LidarModel, seed: u64) -> Result<Vec<PointCloud>> {
    let merged = TriMesh::merged(meshes)?;
    let mut ends = Vec::with_capacity(meshes.len());
    let mut total = 0;
    for m in meshes {
        total += m.triangles().len();
        ends.push(total);
    }
    let rc = Raycaster::new(merged);
    let mut rng = rng_for(seed, 0x11DA);
    let origin = Point3::origin();
    let mut out = vec![Vec::new(); meshes.len()];
    for dir in lidar.directions() {
        if let Some(hit) = rc.cast(&origin, &dir, lidar.max_range) {
            let range = if lidar.noise_sigma > 0.0 {
                hit.distance + lidar.noise_sigma * truncated_normal(&mut rng)
            } else {
                hit.distance
            };
            let owner = ends.partition_point(|&e| e <= hit.triangle);
            out[owner].push(origin + dir * range);
        }
    }
    Ok(out
        .into_iter()
        .map(|pts| PointCloud::new(pts).expect("ray hits are finite"))
        .collect())
}
