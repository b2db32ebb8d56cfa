use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::complete::sample_complete;
use super::lidar::{scan_prepared, LidarModel};
use super::mesh::{box_car, load_obj, BoxCarParams, TriMesh};
use super::raycast::Raycaster;
use super::trajectory::{load_trajectory_csv, make_trajectory, Trajectory, TrajectoryKind, TrajectoryParams};
use super::track::Track;
use crate::error::{Error, Result};
use crate::geometry::{read_ply, write_ply, PlanarPose, PointCloud};
use crate::rng::{derive_seed, rng_for};

/// Generated trajectories keep the vehicle at least this far (m) from the sensor.
pub const MIN_CLEARANCE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub name: String,
    /// OBJ file, relative to the config's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obj: Option<PathBuf>,
    /// Variant index of a procedural box-car.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub procedural: Option<u64>,
}

/// Either a parametric trajectory (parameters drawn from the seed when
/// omitted) or a logged `t,x,y,theta` CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TrajectoryKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<TrajectoryParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

impl TrajectorySpec {
    pub fn random(kind: TrajectoryKind) -> Self {
        Self {
            kind: Some(kind),
            params: None,
            csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub seed: u64,
    pub meshes: Vec<MeshSpec>,
    /// Applied to every mesh.
    pub trajectories: Vec<TrajectorySpec>,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_complete_points")]
    pub complete_points: usize,
    #[serde(default)]
    pub lidar: LidarModel,
}

fn default_frames() -> usize {
    20
}
fn default_complete_points() -> usize {
    1024
}

impl DatasetConfig {
    /// Procedural box-cars, each driven along `trajectories` generated paths
    /// cycling through all trajectory kinds.
    pub fn procedural(seed: u64, meshes: usize, trajectories: usize, frames: usize) -> Self {
        Self {
            seed,
            meshes: (0..meshes)
                .map(|i| MeshSpec {
                    name: format!("car{i:02}"),
                    obj: None,
                    procedural: Some(i as u64),
                })
                .collect(),
            trajectories: (0..trajectories)
                .map(|j| TrajectorySpec::random(TrajectoryKind::ALL[j % TrajectoryKind::ALL.len()]))
                .collect(),
            frames,
            complete_points: default_complete_points(),
            lidar: LidarModel::default(),
        }
    }

    /// Checks everything that can be checked without generating data.
    /// Relative paths resolve against `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.meshes.is_empty() {
            return Err(Error::Config("meshes must list at least one mesh".into()));
        }
        if self.trajectories.is_empty() {
            return Err(Error::Config("trajectories must list at least one trajectory".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if self.complete_points == 0 {
            return Err(Error::Config("complete_points must be at least 1".into()));
        }
        self.lidar.validate()?;
        let mut names = BTreeSet::new();
        for (i, m) in self.meshes.iter().enumerate() {
            let safe = !m.name.is_empty() && m.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !safe {
                return Err(Error::Config(format!(
                    "meshes[{i}].name {:?} must be non-empty [A-Za-z0-9_-]",
                    m.name
                )));
            }
            if !names.insert(&m.name) {
                return Err(Error::Config(format!("meshes[{i}].name {:?} is duplicated", m.name)));
            }
            match (&m.obj, m.procedural) {
                (Some(p), None) => {
                    if !base.join(p).is_file() {
                        return Err(Error::Config(format!(
                            "meshes[{i}].obj: file {} does not exist",
                            base.join(p).display()
                        )));
                    }
                }
                (None, Some(_)) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "meshes[{i}] needs exactly one of \"obj\" or \"procedural\""
                    )))
                }
            }
        }
        for (j, t) in self.trajectories.iter().enumerate() {
            match (&t.kind, &t.csv) {
                (Some(_), None) => {}
                (None, Some(p)) => {
                    if t.params.is_some() {
                        return Err(Error::Config(format!("trajectories[{j}].params does not apply to csv")));
                    }
                    if !base.join(p).is_file() {
                        return Err(Error::Config(format!(
                            "trajectories[{j}].csv: file {} does not exist",
                            base.join(p).display()
                        )));
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "trajectories[{j}] needs exactly one of \"kind\" or \"csv\""
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub t: f64,
    pub partial_ply: String,
    pub pose: PlanarPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub id: String,
    pub mesh: String,
    pub complete_ply: String,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tracks: Vec<TrackEntry>,
    pub lidar: LidarModel,
    pub seed: u64,
}

/// Simulated tracks and the canonical meshes they were scanned from.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub meshes: Vec<(String, TriMesh)>,
    pub tracks: Vec<Track>,
}

fn load_mesh(spec: &MeshSpec, base: &Path, seed: u64) -> Result<TriMesh> {
    match (&spec.obj, spec.procedural) {
        (Some(p), _) => load_obj(&base.join(p)),
        (None, Some(v)) => box_car(&BoxCarParams::variant(&mut rng_for(seed, 0xCA5_0000 + v))),
        (None, None) => Err(Error::Config(format!("mesh {} has no source", spec.name))),
    }
}

/// Random parameters placing the vehicle 10–20 m away, driving roughly
/// across the line of sight.
pub fn random_params<R: Rng + ?Sized>(kind: TrajectoryKind, frames: usize, rng: &mut R) -> Result<TrajectoryParams> {
    for _ in 0..100 {
        let dist = rng.random_range(10.0..20.0);
        let bearing = rng.random_range(-PI..PI);
        let side = if rng.random_bool(0.5) { PI / 2.0 } else { -PI / 2.0 };
        let mut p = TrajectoryParams::new(
            [dist * bearing.cos(), dist * bearing.sin()],
            bearing + side + rng.random_range(-0.5..0.5),
            rng.random_range(3.0..8.0),
        );
        p.radius = rng.random_range(15.0..40.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        p.amplitude = rng.random_range(0.15..0.35);
        p.period = rng.random_range(1.5..3.0);
        let tr = make_trajectory(kind, &p, frames)?;
        if tr.poses.iter().all(|q| q.translation_xy().norm() >= MIN_CLEARANCE) {
            return Ok(p);
        }
    }
    Err(Error::Config(format!("could not place a {} trajectory clear of the sensor", kind.name())))
}

fn resolve_trajectory(spec: &TrajectorySpec, base: &Path, frames: usize, seed: u64) -> Result<Trajectory> {
    if let Some(p) = &spec.csv {
        return load_trajectory_csv(&base.join(p));
    }
    let kind = spec.kind.ok_or_else(|| Error::Config("trajectory without kind".into()))?;
    let params = match spec.params {
        Some(p) => p,
        None => random_params(kind, frames, &mut rng_for(seed, 0x7_0000))?,
    };
    make_trajectory(kind, &params, frames)
}

pub fn track_id(mesh: &str, trajectory: usize) -> String {
    format!("{mesh}-t{trajectory:02}")
}

/// Generates every (mesh, trajectory) track in memory.
pub fn simulate(config: &DatasetConfig, base: &Path) -> Result<SimulatedData> {
    config.validate(base)?;
    let mut meshes = Vec::with_capacity(config.meshes.len());
    let mut tracks = Vec::new();
    for (mi, spec) in config.meshes.iter().enumerate() {
        let mesh = load_mesh(spec, base, config.seed)?;
        let complete = quantize(sample_complete(
            &mesh,
            config.complete_points,
            derive_seed(config.seed, 0xC0DE + mi as u64),
        )?);
        for (tj, tspec) in config.trajectories.iter().enumerate() {
            let stream = derive_seed(config.seed, ((mi as u64) << 20) | tj as u64);
            let traj = resolve_trajectory(tspec, base, config.frames, stream)?;
            let mut clouds = Vec::with_capacity(traj.len());
            let mut poses = Vec::with_capacity(traj.len());
            for (f, vehicle) in traj.poses.iter().enumerate() {
                let pose = config.lidar.sensor_pose(vehicle);
                let rc = Raycaster::new(mesh.transformed(&pose));
                clouds.push(quantize(scan_prepared(&rc, &config.lidar, derive_seed(stream, f as u64))));
                poses.push(pose);
            }
            tracks.push(Track::new(
                track_id(&spec.name, tj),
                spec.name.clone(),
                traj.times.clone(),
                clouds,
                poses,
                complete.clone(),
            )?);
        }
        meshes.push((spec.name.clone(), mesh));
    }
    Ok(SimulatedData { meshes, tracks })
}

/// Rounds coordinates through `f32`, the precision of the PLY files, so
/// in-memory and reloaded datasets agree exactly.
fn quantize(cloud: PointCloud) -> PointCloud {
    let pts = cloud
        .into_points()
        .into_iter()
        .map(|p| p.map(|c| c as f32 as f64))
        .collect();
    PointCloud::new(pts).expect("finite after rounding")
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes tracks, complete clouds and `manifest.json` under `out`.
pub fn write_dataset(data: &SimulatedData, lidar: &LidarModel, seed: u64, out: &Path) -> Result<Manifest> {
    create_dir(&out.join("complete"))?;
    let mut written = BTreeSet::new();
    let mut entries = Vec::with_capacity(data.tracks.len());
    for track in &data.tracks {
        let complete_ply = format!("complete/{}.ply", track.mesh);
        if written.insert(track.mesh.clone()) {
            write_ply(&out.join(&complete_ply), &track.complete)?;
        }
        let dir = format!("partial/{}", track.id);
        create_dir(&out.join(&dir))?;
        let mut frames = Vec::with_capacity(track.len());
        for (f, cloud) in track.clouds.iter().enumerate() {
            let partial_ply = format!("{dir}/{f:04}.ply");
            write_ply(&out.join(&partial_ply), cloud)?;
            frames.push(FrameEntry {
                t: track.times[f],
                partial_ply,
                pose: track.poses[f],
            });
        }
        entries.push(TrackEntry {
            id: track.id.clone(),
            mesh: track.mesh.clone(),
            complete_ply,
            frames,
        });
    }
    let manifest = Manifest {
        tracks: entries,
        lidar: lidar.clone(),
        seed,
    };
    let path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Simulates `config` (paths relative to `base`) and writes it to `out`.
pub fn build_dataset(config: &DatasetConfig, base: &Path, out: &Path) -> Result<Manifest> {
    let data = simulate(config, base)?;
    write_dataset(&data, &config.lidar, config.seed, out)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))
}

/// Loads every track listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<Track>)> {
    let manifest = read_manifest(dir)?;
    let mut tracks = Vec::with_capacity(manifest.tracks.len());
    let mut completes: Vec<(String, PointCloud)> = Vec::new();
    for entry in &manifest.tracks {
        let complete = match completes.iter().find(|(p, _)| *p == entry.complete_ply) {
            Some((_, c)) => c.clone(),
            None => {
                let c = read_ply(&dir.join(&entry.complete_ply))?;
                completes.push((entry.complete_ply.clone(), c.clone()));
                c
            }
        };
        let clouds = entry
            .frames
            .iter()
            .map(|f| read_ply(&dir.join(&f.partial_ply)))
            .collect::<Result<Vec<_>>>()?;
        tracks.push(Track::new(
            entry.id.clone(),
            entry.mesh.clone(),
            entry.frames.iter().map(|f| f.t).collect(),
            clouds,
            entry.frames.iter().map(|f| f.pose).collect(),
            complete,
        )?);
    }
    Ok((manifest, tracks))
}
