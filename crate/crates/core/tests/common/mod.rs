#![allow(dead_code)]

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqfit::amodal::{CameraModel, InstanceTrack, MaskImage};
use seqfit::geometry::{PlanarPose, PointCloud};
use seqfit::model::{Estimator, Mode};
use seqfit::simulator::{scan_scene, LidarModel, TriMesh};

pub const FX: f64 = 800.0;
pub const WIDTH: usize = 640;
pub const HEIGHT: usize = 480;

/// Narrow, dense sensor mounted 1 m up so that a 2 m cube is centered on the horizon.
pub fn fine_lidar() -> LidarModel {
    LidarModel {
        elevations_deg: (0..=100).map(|i| -10.0 + 0.2 * i as f64).collect(),
        azimuth_step_deg: 0.2,
        azimuth_window_deg: [-20.0, 20.0],
        height: 1.0,
        noise_sigma: 0.01,
        max_range: 60.0,
    }
}

/// 2 m cube standing on the ground at the canonical origin.
pub fn cube() -> TriMesh {
    TriMesh::cuboid(Point3::new(0.0, 0.0, 1.0), Vector3::repeat(1.0)).unwrap()
}

pub fn cube_corners() -> Vec<Point3<f64>> {
    let mut out = Vec::new();
    for x in [-1.0, 1.0] {
        for y in [-1.0, 1.0] {
            for z in [0.0, 2.0] {
                out.push(Point3::new(x, y, z));
            }
        }
    }
    out
}

/// Camera at the sensor looking along +x.
pub fn front_camera() -> CameraModel {
    CameraModel::look_at(Point3::origin(), Point3::new(1.0, 0.0, 0.0), FX, FX, WIDTH, HEIGHT).unwrap()
}

/// Convex hull by Andrew's monotone chain, counter-clockwise.
pub fn hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub fn polygon_area(ring: &[[f64; 2]]) -> f64 {
    (0..ring.len())
        .map(|i| {
            let (p, q) = (ring[i], ring[(i + 1) % ring.len()]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Pixel mask of the projected convex hull of sensor-frame `corners` seen by
/// `front_camera`, sampled at integer pixel positions with edges included.
pub fn silhouette(corners: &[Point3<f64>]) -> MaskImage {
    let (cx, cy) = ((WIDTH as f64 - 1.0) / 2.0, (HEIGHT as f64 - 1.0) / 2.0);
    let uv: Vec<[f64; 2]> = corners
        .iter()
        .map(|p| [cx - FX * p.y / p.x, cy - FX * p.z / p.x])
        .collect();
    let ring = hull(uv);
    let mut mask = MaskImage::new(WIDTH, HEIGHT);
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let q = [x as f64, y as f64];
            let inside = (0..ring.len()).all(|i| {
                let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
                (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]) >= -1e-9
            });
            mask.set(x, y, inside);
        }
    }
    mask
}

pub fn iou(a: &MaskImage, b: &MaskImage) -> f64 {
    let inter = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| **x && **y).count();
    let union = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| **x || **y).count();
    inter as f64 / union as f64
}

/// Returns a fixed canonical shape placed at known poses.
pub struct PosedShape {
    pub shape: PointCloud,
    pub poses: Vec<PlanarPose>,
}

impl PosedShape {
    pub fn dense_cube(poses: Vec<PlanarPose>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        Self {
            shape: PointCloud::new(cube().sample_surface(40_000, &mut rng)).unwrap(),
            poses,
        }
    }
}

impl Estimator for PosedShape {
    fn estimate(&self, clouds: &[PointCloud], _mode: Mode) -> seqfit::Result<Vec<(PointCloud, PlanarPose)>> {
        assert_eq!(clouds.len(), self.poses.len());
        Ok(self.poses.iter().map(|p| (p.apply(&self.shape), *p)).collect())
    }
}

pub struct TwoCubes {
    /// Near cube first, far cube second.
    pub instances: Vec<InstanceTrack>,
    pub near_corners: Vec<Point3<f64>>,
    pub far_corners: Vec<Point3<f64>>,
}

/// A cube 15 m ahead whose right half is hidden by a cube 8 m ahead.
pub fn two_cubes(seed: u64) -> TwoCubes {
    let lidar = fine_lidar();
    let near_pose = lidar.sensor_pose(&PlanarPose::new(0.0, 8.0, -1.0));
    let far_pose = lidar.sensor_pose(&PlanarPose::new(0.0, 15.0, 0.0));
    let (near, far) = (cube().transformed(&near_pose), cube().transformed(&far_pose));
    let clouds = scan_scene(&[&near, &far], &lidar, seed).unwrap();
    let corners = |pose: &PlanarPose| cube_corners().iter().map(|c| pose.transform_point(c)).collect();
    TwoCubes {
        instances: vec![
            InstanceTrack {
                id: "near".into(),
                clouds: vec![clouds[0].clone()],
                poses: Some(vec![near_pose]),
            },
            InstanceTrack {
                id: "far".into(),
                clouds: vec![clouds[1].clone()],
                poses: Some(vec![far_pose]),
            },
        ],
        near_corners: corners(&near_pose),
        far_corners: corners(&far_pose),
    }
}
