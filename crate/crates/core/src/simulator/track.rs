use crate::error::{Error, Result};
use crate::geometry::{PlanarPose, PointCloud};

/// Time-ordered measurements of one object with its ground truth.
///
/// `clouds[i]` is the partial scan in the sensor frame, `poses[i]` maps the
/// canonical object frame into the sensor frame, and `complete` is the full
/// shape in the canonical frame (empty when unknown).
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: String,
    pub mesh: String,
    pub times: Vec<f64>,
    pub clouds: Vec<PointCloud>,
    pub poses: Vec<PlanarPose>,
    pub complete: PointCloud,
}

impl Track {
    pub fn new(
        id: impl Into<String>,
        mesh: impl Into<String>,
        times: Vec<f64>,
        clouds: Vec<PointCloud>,
        poses: Vec<PlanarPose>,
        complete: PointCloud,
    ) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::DegenerateInput("track has no frames".into()));
        }
        if times.len() != clouds.len() || poses.len() != clouds.len() {
            return Err(Error::ShapeMismatch(format!(
                "track has {} clouds, {} times and {} poses",
                clouds.len(),
                times.len(),
                poses.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DegenerateInput("track timestamps must strictly increase".into()));
        }
        Ok(Self {
            id: id.into(),
            mesh: mesh.into(),
            times,
            clouds,
            poses,
            complete,
        })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Ground-truth complete shape placed in the sensor frame of frame `i`.
    pub fn complete_at(&self, i: usize) -> PointCloud {
        self.poses[i].apply(&self.complete)
    }
}
