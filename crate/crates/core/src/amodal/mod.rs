mod alpha;
mod camera;
mod delaunay;
mod label;
mod mask;
mod occlusion;
mod raster;

pub use alpha::{alpha_shape_2d, assemble_polygons, convex_hull, ring_contains, signed_area, Polygon, Ring, DEFAULT_ALPHA};
pub use camera::{CameraModel, Projection};
pub use delaunay::{circumradius, triangulate, Triangulation};
pub use label::{
    instance_shapes, label_scene, label_track, load_external_instances, mask_file_name, mask_for_cloud, read_labels,
    score_labels, write_labels, ExternalInstance, ExternalInstances, FrameLabels, InstanceLabel, InstanceTrack,
    LabelFrameEntry, LabelInstanceEntry, LabelManifest, LabelOptions, LabelScenario, LabelScore,
};
pub use mask::MaskImage;
pub use occlusion::{occlusion_order, Occlusion};
pub use raster::rasterize;
