//! Shape and pose losses, evaluation metrics and instance-mask scores.

pub mod assignment;
pub mod nearest;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::amodal::MaskImage;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, PlanarPose, PointCloud};

/// Exact assignment is used up to this many points per side.
pub const EXACT_EMD_LIMIT: usize = 512;
/// Per-point slack of the auction solver above [`EXACT_EMD_LIMIT`].
pub const AUCTION_EPSILON: f64 = 1e-3;
/// Reference-instance match threshold for `percent_miss`.
pub const MATCH_IOU: f64 = 0.5;

/// Symmetric mean nearest-neighbor distance (unsquared Euclidean):
/// the mean over `x` of its distance to `x_gt` plus the mean over `x_gt` of
/// its distance to `x`.
pub fn chamfer(x: &PointCloud, x_gt: &PointCloud) -> Result<f64> {
    if x.is_empty() || x_gt.is_empty() {
        return Err(Error::DegenerateInput("chamfer distance needs two non-empty clouds".into()));
    }
    let forward: f64 = nearest::nearest_distances(x.points(), x_gt.points()).iter().sum();
    let backward: f64 = nearest::nearest_distances(x_gt.points(), x.points()).iter().sum();
    Ok(forward / x.len() as f64 + backward / x_gt.len() as f64)
}

/// Earth mover's distance between equal-size clouds: the mean point distance
/// under the optimal one-to-one matching.
pub fn emd(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "emd needs equal-size clouds, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::DegenerateInput("emd of empty clouds".into()));
    }
    let n = x.len();
    let cost: Vec<f64> = x
        .iter()
        .flat_map(|p| y.iter().map(move |q| (p - q).norm()))
        .collect();
    let matching = if n <= EXACT_EMD_LIMIT {
        assignment::hungarian(&cost, n)
    } else {
        assignment::auction(&cost, n, AUCTION_EPSILON)
    };
    let total: f64 = matching.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / n as f64)
}

/// Mean squared distance between `T^-1 x` and `T_gt^-1 x` over the points of
/// `x_gt`, which must be expressed in the frame both poses map into.
pub fn pose_loss(t: &PlanarPose, t_gt: &PlanarPose, x_gt: &PointCloud) -> Result<f64> {
    if x_gt.is_empty() {
        return Err(Error::DegenerateInput("pose loss needs a non-empty reference cloud".into()));
    }
    let inv = t.inverse();
    let inv_gt = t_gt.inverse();
    let sum: f64 = x_gt
        .iter()
        .map(|x| (inv.transform_point(x) - inv_gt.transform_point(x)).norm_squared())
        .sum();
    Ok(sum / x_gt.len() as f64)
}

/// Planar distance between the two translations, meters.
pub fn translation_error(t: &PlanarPose, t_gt: &PlanarPose) -> f64 {
    (t.translation_xy() - t_gt.translation_xy()).norm()
}

/// Absolute wrapped heading difference, degrees in `[0, 180]`.
pub fn rotation_error(t: &PlanarPose, t_gt: &PlanarPose) -> f64 {
    wrap_angle(t.theta - t_gt.theta).abs().to_degrees()
}

/// Rotation error with the front/back ambiguity folded out, degrees in `[0, 90]`.
pub fn rotation_error_folded(t: &PlanarPose, t_gt: &PlanarPose) -> f64 {
    let e = rotation_error(t, t_gt);
    e.min(180.0 - e)
}

/// One evaluated frame of a track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame_index: usize,
    pub cd: f64,
    pub emd: f64,
    pub trans_err: f64,
    pub rot_err: f64,
}

pub const METRIC_CSV_HEADER: &str = "frame,cd,emd,trans_err,rot_err";

/// CSV rows with the fixed header; floats use shortest round-trip formatting.
pub fn reports_to_csv(rows: &[MetricReport]) -> String {
    let mut out = String::from(METRIC_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.frame_index, r.cd, r.emd, r.trans_err, r.rot_err);
    }
    out
}

pub fn reports_from_csv(text: &str) -> Result<Vec<MetricReport>> {
    let bad = |m: String| Error::parse("<metric csv>", m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRIC_CSV_HEADER) {
        return Err(bad(format!("expected header `{METRIC_CSV_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("row {} has {} fields", i + 1, f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 1)));
            Ok(MetricReport {
                frame_index: f[0].trim().parse().map_err(|e| bad(format!("row {}: {e}", i + 1)))?,
                cd: num(f[1])?,
                emd: num(f[2])?,
                trans_err: num(f[3])?,
                rot_err: num(f[4])?,
            })
        })
        .collect()
}

/// Intersection over union of two equally sized masks. Two empty masks score 0.
pub fn mask_iou(a: &MaskImage, b: &MaskImage) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ShapeMismatch(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// A prediction/reference pairing chosen by [`greedy_match`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskMatch {
    pub pred: usize,
    pub reference: usize,
    pub iou: f64,
}

/// One-to-one matching, greedy by descending IoU; pairs with zero overlap are
/// never matched. Ties break toward lower indices.
pub fn greedy_match(pred: &[MaskImage], reference: &[MaskImage]) -> Result<Vec<MaskMatch>> {
    let mut candidates = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            let iou = mask_iou(p, r)?;
            if iou > 0.0 {
                candidates.push(MaskMatch {
                    pred: i,
                    reference: j,
                    iou,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.reference.cmp(&b.reference))
            .then(a.pred.cmp(&b.pred))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut out = Vec::new();
    for c in candidates {
        if !pred_used[c.pred] && !ref_used[c.reference] {
            pred_used[c.pred] = true;
            ref_used[c.reference] = true;
            out.push(c);
        }
    }
    Ok(out)
}

/// Percentage of reference instances without a matched prediction of IoU >= 0.5.
pub fn percent_miss(pred: &[MaskImage], reference: &[MaskImage]) -> Result<f64> {
    if reference.is_empty() {
        return Ok(0.0);
    }
    let hits = greedy_match(pred, reference)?.iter().filter(|m| m.iou >= MATCH_IOU).count();
    Ok(100.0 * (reference.len() - hits) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    fn one_sided(a: &PointCloud, b: &PointCloud) -> f64 {
        a.iter()
            .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn chamfer_examples() {
        let a = PointCloud::from_xyz(&[[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(30, &mut rng);
        assert_eq!(chamfer(&c, &c).unwrap(), 0.0);
        assert!(matches!(chamfer(&c, &PointCloud::empty()), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn chamfer_grid_path_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cloud(4500, &mut rng);
        let b = random_cloud(300, &mut rng);
        let expected = one_sided(&a, &b) + one_sided(&b, &a);
        assert_eq!(chamfer(&a, &b).unwrap(), expected);
    }

    #[test]
    fn chamfer_common_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(20, &mut rng);
        let b = random_cloud(25, &mut rng);
        let d = nalgebra::Vector3::new(0.5, -0.25, 2.0);
        let c0 = chamfer(&a, &b).unwrap();
        let c1 = chamfer(&a.translated(&d), &b.translated(&d)).unwrap();
        assert!((c0 - c1).abs() < 1e-12);
    }

    #[test]
    fn emd_examples() {
        let a = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::from_xyz(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(emd(&a, &b).unwrap(), 0.0);
        assert_eq!(emd(&a, &a).unwrap(), 0.0);
        assert!(matches!(emd(&a, &PointCloud::from_xyz(&[[0.0; 3]]).unwrap()), Err(Error::ShapeMismatch(_))));
        assert!(matches!(emd(&PointCloud::empty(), &PointCloud::empty()), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn emd_auction_path_is_close_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_cloud(520, &mut rng);
        let b = random_cloud(520, &mut rng);
        let n = a.len();
        let cost: Vec<f64> = a.iter().flat_map(|p| b.iter().map(move |q| (p - q).norm())).collect();
        let exact: f64 = assignment::hungarian(&cost, n).iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64;
        let approx = emd(&a, &b).unwrap();
        assert!(approx >= exact - 1e-12 && approx - exact <= AUCTION_EPSILON);
    }

    #[test]
    fn pose_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_cloud(16, &mut rng);
        let p = PlanarPose::new(0.3, 1.0, 2.0);
        assert_eq!(pose_loss(&p, &p, &x).unwrap(), 0.0);
        let shifted = PlanarPose::new(0.0, 0.3, 0.4);
        let l = pose_loss(&shifted, &PlanarPose::identity(), &x).unwrap();
        assert!((l - 0.25).abs() < 1e-12);
        assert!(pose_loss(&p, &p, &PointCloud::empty()).is_err());
    }

    #[test]
    fn pose_loss_matches_explicit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_cloud(16, &mut rng);
        let t = PlanarPose::new(1.2, 0.4, -0.7).with_z(0.1);
        let g = PlanarPose::new(-0.5, 0.1, 0.3);
        let mut sum = 0.0;
        for p in x.iter() {
            let (s, c) = t.theta.sin_cos();
            let (sg, cg) = g.theta.sin_cos();
            let (dx, dy) = (p.x - t.t[0], p.y - t.t[1]);
            let a = [c * dx + s * dy, -s * dx + c * dy, p.z - t.z_offset];
            let (gx, gy) = (p.x - g.t[0], p.y - g.t[1]);
            let b = [cg * gx + sg * gy, -sg * gx + cg * gy, p.z - g.z_offset];
            sum += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
        }
        assert!((pose_loss(&t, &g, &x).unwrap() - sum / 16.0).abs() < 1e-12);
    }

    #[test]
    fn pose_error_examples() {
        let p = PlanarPose::new(0.2, 1.0, 1.0);
        assert_eq!((translation_error(&p, &p), rotation_error(&p, &p)), (0.0, 0.0));
        let a = PlanarPose { theta: PI, t: [0.0, 0.0], z_offset: 0.0 };
        let b = PlanarPose { theta: -PI, t: [0.0, 0.0], z_offset: 0.0 };
        assert_eq!(rotation_error(&a, &b), 0.0);
        let e = rotation_error(&PlanarPose::new(0.1, 0.0, 0.0), &PlanarPose::new(-0.1, 0.0, 0.0));
        assert!((e - 0.2f64.to_degrees()).abs() < 1e-12);
        assert!((e - 11.459155902616464).abs() < 1e-9);
        assert!((rotation_error_folded(&PlanarPose::new(PI - 0.1, 0.0, 0.0), &PlanarPose::identity()) - 0.1f64.to_degrees()).abs() < 1e-9);
        assert_eq!(translation_error(&PlanarPose::new(0.0, 3.0, 4.0), &PlanarPose::identity()), 5.0);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricReport { frame_index: 1, cd: 0.1, emd: 0.25, trans_err: 1.0 / 3.0, rot_err: 179.5 },
            MetricReport { frame_index: 2, cd: 1e-17, emd: 0.0, trans_err: 2.0, rot_err: 0.0 },
        ];
        let text = reports_to_csv(&rows);
        assert!(text.starts_with("frame,cd,emd,trans_err,rot_err\n"));
        assert_eq!(reports_from_csv(&text).unwrap(), rows);
        assert!(reports_from_csv("bad\n").is_err());
    }

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> MaskImage {
        let mut m = MaskImage::new(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn mask_examples() {
        let a = rect(20, 10, 0, 0, 10, 10);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let far = rect(20, 10, 12, 0, 20, 10);
        assert_eq!(mask_iou(&a, &far).unwrap(), 0.0);
        assert_eq!(percent_miss(&[far.clone()], &[a.clone()]).unwrap(), 100.0);
        // Equal 10x10 areas overlapping by half: 50 / 150.
        let half = rect(20, 10, 5, 0, 15, 10);
        assert!((mask_iou(&a, &half).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(mask_iou(&a, &MaskImage::new(5, 5)), Err(Error::ShapeMismatch(_))));
        assert_eq!(percent_miss(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        assert_eq!(percent_miss(&[], &[a.clone(), far.clone()]).unwrap(), 100.0);
    }

    #[test]
    fn greedy_match_is_one_to_one() {
        let a = rect(30, 10, 0, 0, 10, 10);
        let b = rect(30, 10, 2, 0, 12, 10);
        let c = rect(30, 10, 20, 0, 30, 10);
        let m = greedy_match(&[b.clone(), a.clone()], &[a.clone(), c]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].pred, m[0].reference, m[0].iou), (1, 0, 1.0));
        assert_eq!(percent_miss(&[b, a.clone()], &[a, rect(30, 10, 20, 0, 30, 10)]).unwrap(), 50.0);
    }

    proptest! {
        #[test]
        fn emd_symmetric_and_dominates_half_chamfer(seed in 0u64..10_000, n in 1usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(n, &mut rng);
            let b = random_cloud(n, &mut rng);
            let e_ab = emd(&a, &b).unwrap();
            let e_ba = emd(&b, &a).unwrap();
            prop_assert!((e_ab - e_ba).abs() <= 1e-12);
            prop_assert!(e_ab >= one_sided(&a, &b).max(one_sided(&b, &a)) - 1e-12);
            prop_assert!(e_ab >= chamfer(&a, &b).unwrap() / 2.0);
        }

        #[test]
        fn chamfer_nonnegative_zero_on_equal_sets(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(10, &mut rng);
            let b = random_cloud(10, &mut rng);
            prop_assert!(chamfer(&a, &b).unwrap() > 0.0);
            let mut rev = a.points().to_vec();
            rev.reverse();
            prop_assert_eq!(chamfer(&a, &PointCloud::new(rev).unwrap()).unwrap(), 0.0);
        }
    }
}
