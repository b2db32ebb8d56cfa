mod complete;
mod dataset;
mod lidar;
mod mesh;
mod raycast;
mod track;
mod trajectory;

pub use complete::{icosphere_directions, sample_complete, viewpoints, MAX_ROUNDS, VIEWPOINTS};
pub use dataset::{
    build_dataset, load_dataset, random_params, read_manifest, simulate, track_id, write_dataset, DatasetConfig,
    FrameEntry, Manifest, MeshSpec, SimulatedData, TrackEntry, TrajectorySpec, MIN_CLEARANCE,
};
pub use lidar::{raycast_scan, scan_prepared, scan_scene, LidarModel, NOISE_TRUNCATION};
pub use mesh::{box_car, load_obj, parse_obj, write_obj, BoxCarParams, TriMesh, MIN_TRIANGLE_AREA};
pub use raycast::{intersect_triangle, point_mesh_distance, point_triangle_distance, ray_box, Hit, Raycaster};
pub use track::Track;
pub use trajectory::{
    load_trajectory_csv, make_trajectory, trajectory_from_csv, trajectory_to_csv, Trajectory, TrajectoryKind,
    TrajectoryParams, TRAJECTORY_CSV_HEADER,
};
