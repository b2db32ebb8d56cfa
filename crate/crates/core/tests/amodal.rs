mod common;

use common::*;
use nalgebra::{Matrix4, Point3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqfit::amodal::*;
use seqfit::geometry::{mirror_about_heading, write_ply, PlanarPose, PointCloud};
use seqfit::simulator::raycast_scan;
use seqfit::Error;

fn moving_cube_track() -> (InstanceTrack, Vec<Vec<Point3<f64>>>) {
    let lidar = fine_lidar();
    let poses: Vec<PlanarPose> = (0..3)
        .map(|f| lidar.sensor_pose(&PlanarPose::new(0.15 * f as f64, 8.0 + 0.4 * f as f64, 0.3 - 0.2 * f as f64)))
        .collect();
    let clouds = poses
        .iter()
        .enumerate()
        .map(|(f, p)| raycast_scan(&cube(), p, &lidar, 40 + f as u64))
        .collect();
    let corners = poses
        .iter()
        .map(|p| cube_corners().iter().map(|c| p.transform_point(c)).collect())
        .collect();
    (
        InstanceTrack {
            id: "cube".into(),
            clouds,
            poses: Some(poses),
        },
        corners,
    )
}

fn random_rigid(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rot = Rotation3::from_scaled_axis(axis);
    let t = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-5.0..5.0));
    let mut m = rot.to_homogeneous();
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_invariant_under_rigid_motion(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = front_camera();
        let cloud = PointCloud::new(
            (0..50)
                .map(|_| Point3::new(rng.random_range(2.0..30.0), rng.random_range(-8.0..8.0), rng.random_range(-3.0..3.0)))
                .collect(),
        )
        .unwrap();
        let t = random_rigid(&mut rng);
        let moved_cam = CameraModel {
            extrinsic: {
                let m = t * cam.camera_to_world();
                std::array::from_fn(|i| m[(i / 4, i % 4)])
            },
            ..cam.clone()
        };
        let moved = PointCloud::new(cloud.iter().map(|p| t.transform_point(p)).collect()).unwrap();
        for (a, b) in cam.project(&cloud).iter().zip(moved_cam.project(&moved)) {
            prop_assert!((a.u - b.u).abs() <= 1e-9 && (a.v - b.v).abs() <= 1e-9);
            prop_assert!((a.depth - b.depth).abs() <= 1e-9);
            prop_assert_eq!(a.in_image, b.in_image);
        }
    }

    #[test]
    fn unbounded_alpha_is_the_convex_hull(seed in any::<u64>(), n in 3usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..500.0), rng.random_range(0.0..400.0)]).collect();
        let expected = polygon_area(&hull(pts.clone()));
        prop_assume!(expected > 1.0);
        for polys in [convex_hull(&pts).unwrap(), alpha_shape_2d(&pts, 1e12).unwrap()] {
            prop_assert_eq!(polys.len(), 1);
            prop_assert!((polys[0].area() - expected).abs() < 1.0);
        }
    }
}

#[test]
fn principal_point_and_pinhole() {
    let cam = front_camera();
    let p = cam.project_point(&Point3::new(7.0, 0.0, 0.0));
    assert_eq!((p.u, p.v, p.depth), (cam.cx, cam.cy, 7.0));
    let q = cam.project_point(&Point3::new(5.0, -1.5, 0.0));
    assert!((q.u - (cam.cx + FX * 1.5 / 5.0)).abs() < 1e-12);
    let behind = cam.project_point(&Point3::new(-2.0, 0.0, 0.0));
    assert!(!behind.in_front && !behind.in_image);
}

#[test]
fn cube_corners_project_exactly() {
    let cam = front_camera();
    let pose = PlanarPose::new(0.4, 9.0, 1.0).with_z(-1.0);
    for c in cube_corners() {
        let p = pose.transform_point(&c);
        let pr = cam.project_point(&p);
        let (u, v) = (cam.cx - FX * p.y / p.x, cam.cy - FX * p.z / p.x);
        assert!((pr.u - u).abs() < 1e-9 && (pr.v - v).abs() < 1e-9);
    }
}

#[test]
fn visible_cube_matches_silhouette_in_every_mode() {
    let (track, corners) = moving_cube_track();
    let cam = front_camera();
    let oracle = PosedShape::dense_cube(track.poses.clone().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut frames = Vec::new();
    for (f, c) in track.clouds.iter().enumerate() {
        let name = format!("{f}.ply");
        write_ply(&dir.path().join(&name), c).unwrap();
        frames.push(Some(name));
    }
    let manifest = ExternalInstances {
        instances: vec![ExternalInstance {
            id: "cube".into(),
            frames,
        }],
    };
    let path = dir.path().join("instances.json");
    std::fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    let external = load_external_instances(&path).unwrap();
    assert_eq!(external[0].clouds.len(), 3);
    assert!(external[0].poses.is_none());

    let opts = LabelOptions::default();
    let runs = [
        (LabelScenario::GtAccumulation, &track),
        (LabelScenario::SequentialCompletionGt, &track),
        (LabelScenario::SequentialCompletionExternal, &external[0]),
    ];
    for (mode, input) in runs {
        let labels = label_track(mode, input, &cam, Some(&oracle), &opts).unwrap();
        assert_eq!(labels.len(), 3);
        for (fl, c) in labels.iter().zip(&corners) {
            let score = iou(&fl.instances[0].amodal, &silhouette(c));
            assert!(score >= 0.9, "{} frame {}: IoU {score}", mode.name(), fl.frame);
            assert_eq!(fl.instances[0].amodal, fl.instances[0].inmodal);
        }
    }
}

#[test]
fn hidden_half_is_restored() {
    let scene = two_cubes(3);
    let cam = front_camera();
    let labels = label_scene(LabelScenario::GtAccumulation, &scene.instances, &cam, None, &LabelOptions::default()).unwrap();
    let fl = &labels[0];
    assert_eq!(fl.order, vec![0, 1]);
    let (near, far) = (&fl.instances[0], &fl.instances[1]);
    assert!(near.depth.unwrap() < far.depth.unwrap());
    let truth = silhouette(&scene.far_corners);
    let score = iou(&far.amodal, &truth);
    assert!(score >= 0.85, "far IoU {score}");
    // The scan alone sees only the unoccluded half.
    let (scan_only, _) = mask_for_cloud(&scene.instances[1].clouds[0], &cam, &LabelOptions::default()).unwrap();
    assert!(iou(&scan_only, &truth) < 0.7);
    for inst in &fl.instances {
        assert!(inst.inmodal.is_subset_of(&inst.amodal));
    }
    let overlap = far.amodal.pixels().iter().zip(near.amodal.pixels()).filter(|(a, b)| **a && **b).count();
    assert!(overlap > 0);
    assert!(far.inmodal.pixels().iter().zip(near.amodal.pixels()).all(|(a, b)| !(*a && *b)));
    let amodal: usize = fl.instances.iter().map(|i| i.amodal.count()).sum();
    let inmodal: usize = fl.instances.iter().map(|i| i.inmodal.count()).sum();
    assert_eq!(amodal - inmodal, overlap);
}

#[test]
fn single_frame_accumulation_is_the_mirrored_scan() {
    let (track, _) = moving_cube_track();
    let single = InstanceTrack {
        id: "one".into(),
        clouds: vec![track.clouds[1].clone()],
        poses: Some(vec![track.poses.as_ref().unwrap()[1]]),
    };
    let cam = front_camera();
    let opts = LabelOptions::default();
    let labels = label_track(LabelScenario::GtAccumulation, &single, &cam, None, &opts).unwrap();
    let pose = single.poses.as_ref().unwrap()[0];
    let mirrored = mirror_about_heading(&single.clouds[0], &pose).unwrap();
    let (mask, depth) = mask_for_cloud(&mirrored, &cam, &opts).unwrap();
    assert!(iou(&labels[0].instances[0].amodal, &mask) > 0.999);
    assert!((labels[0].instances[0].depth.unwrap() - depth.unwrap()).abs() < 1e-9);
}

#[test]
fn mode_inputs_are_checked() {
    let (track, _) = moving_cube_track();
    let cam = front_camera();
    let opts = LabelOptions::default();
    for mode in [LabelScenario::SequentialCompletionGt, LabelScenario::SequentialCompletionExternal] {
        assert!(matches!(label_track(mode, &track, &cam, None, &opts), Err(Error::Config(_))));
    }
    let no_poses = InstanceTrack {
        poses: None,
        ..track.clone()
    };
    assert!(matches!(
        label_track(LabelScenario::GtAccumulation, &no_poses, &cam, None, &opts),
        Err(Error::MissingGroundTruth(_))
    ));
    let short = InstanceTrack {
        clouds: track.clouds[..2].to_vec(),
        poses: None,
        id: "short".into(),
    };
    assert!(matches!(
        label_scene(LabelScenario::GtAccumulation, &[track, short], &cam, None, &opts),
        Err(Error::ShapeMismatch(_))
    ));
    assert!("sc_gt".parse::<LabelScenario>().is_err());
    for mode in LabelScenario::ALL {
        assert_eq!(mode.name().parse::<LabelScenario>().unwrap(), mode);
    }
}

#[test]
fn nothing_is_labeled_before_first_detection() {
    let (mut track, _) = moving_cube_track();
    track.clouds[0] = PointCloud::empty();
    let oracle = PosedShape::dense_cube(track.poses.clone().unwrap());
    let labels = label_track(
        LabelScenario::SequentialCompletionGt,
        &track,
        &front_camera(),
        Some(&oracle),
        &LabelOptions::default(),
    )
    .unwrap();
    assert_eq!(labels[0].instances[0].amodal.count(), 0);
    assert_eq!(labels[0].instances[0].depth, None);
    assert!(labels[1].instances[0].amodal.count() > 0);
}

#[test]
fn scoring() {
    let scene = two_cubes(9);
    let cam = front_camera();
    let opts = LabelOptions::default();
    let labels = label_scene(LabelScenario::GtAccumulation, &scene.instances, &cam, None, &opts).unwrap();
    let s = score_labels(&labels, &labels).unwrap();
    assert_eq!((s.miou, s.percent_miss, s.matched, s.references), (1.0, 0.0, 2, 2));

    let mut empty = labels.clone();
    for inst in &mut empty[0].instances {
        inst.amodal = MaskImage::new(WIDTH, HEIGHT);
    }
    assert_eq!(score_labels(&empty, &labels).unwrap().percent_miss, 100.0);
    assert!(matches!(score_labels(&labels, &[]), Err(Error::ShapeMismatch(_))));
}

#[test]
fn written_labels_are_stable() {
    let scene = two_cubes(1);
    let cam = front_camera();
    let labels = label_scene(LabelScenario::GtAccumulation, &scene.instances, &cam, None, &LabelOptions::default()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_labels(a.path(), LabelScenario::GtAccumulation, &labels).unwrap();
    let again = label_scene(LabelScenario::GtAccumulation, &scene.instances, &cam, None, &LabelOptions::default()).unwrap();
    write_labels(b.path(), LabelScenario::GtAccumulation, &again).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "000000_000_amodal.pgm",
            "000000_000_inmodal.pgm",
            "000000_001_amodal.pgm",
            "000000_001_inmodal.pgm",
            "labels.json"
        ]
    );
    for n in &names {
        assert_eq!(std::fs::read(a.path().join(n)).unwrap(), std::fs::read(b.path().join(n)).unwrap());
    }
    let (manifest, read) = read_labels(a.path()).unwrap();
    assert_eq!(manifest.mode, LabelScenario::GtAccumulation);
    assert_eq!(read, labels);
}
