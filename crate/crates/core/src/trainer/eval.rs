use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PlanarPose, PointCloud};
use crate::metrics::{chamfer, emd, rotation_error, rotation_error_folded, translation_error, MetricReport};
use crate::model::{Estimator, Mode};
use crate::rng::rng_for;
use crate::simulator::Track;

/// Both clouds are resampled to this many points before EMD.
pub const EMD_POINTS: usize = 256;
pub const EMD_SEED: u64 = 0xE3D;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub track: String,
    pub report: MetricReport,
    pub rot_err_folded: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub count: usize,
    pub cd: f64,
    pub emd: f64,
    pub trans_err: f64,
    pub rot_err: f64,
    pub rot_err_folded: f64,
}

/// Means over all frames and bucketed by detection count (1-based frame index).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall: MetricMeans,
    pub by_detections: BTreeMap<usize, MetricMeans>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeEvaluation {
    pub mode: Mode,
    pub records: Vec<FrameRecord>,
    pub aggregate: Aggregate,
}

impl ModeEvaluation {
    pub fn reports(&self) -> Vec<MetricReport> {
        self.records.iter().map(|r| r.report).collect()
    }

    /// Means over frames whose detection count satisfies `keep`.
    pub fn means_where(&self, keep: impl Fn(usize) -> bool) -> MetricMeans {
        let rows: Vec<&FrameRecord> = self.records.iter().filter(|r| keep(r.report.frame_index)).collect();
        means(&rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub modes: Vec<ModeEvaluation>,
}

impl Evaluation {
    pub fn get(&self, mode: Mode) -> Option<&ModeEvaluation> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// `{"sequential": Aggregate, "per_frame": Aggregate}`.
    pub fn aggregates_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for m in &self.modes {
            map.insert(m.mode.name().into(), serde_json::to_value(&m.aggregate).expect("aggregate serializes"));
        }
        serde_json::Value::Object(map)
    }
}

fn means(rows: &[&FrameRecord]) -> MetricMeans {
    let mut m = MetricMeans::default();
    for r in rows {
        m.cd += r.report.cd;
        m.emd += r.report.emd;
        m.trans_err += r.report.trans_err;
        m.rot_err += r.report.rot_err;
        m.rot_err_folded += r.rot_err_folded;
    }
    m.count = rows.len();
    if m.count > 0 {
        let n = m.count as f64;
        m.cd /= n;
        m.emd /= n;
        m.trans_err /= n;
        m.rot_err /= n;
        m.rot_err_folded /= n;
    }
    m
}

/// Overall and per-detection-count means, summed in record order.
pub fn aggregate(records: &[FrameRecord]) -> Aggregate {
    let all: Vec<&FrameRecord> = records.iter().collect();
    let mut buckets: BTreeMap<usize, Vec<&FrameRecord>> = BTreeMap::new();
    for r in records {
        buckets.entry(r.report.frame_index).or_default().push(r);
    }
    Aggregate {
        overall: means(&all),
        by_detections: buckets.into_iter().map(|(k, v)| (k, means(&v))).collect(),
    }
}

fn frame_metrics(
    estimate: &PointCloud,
    pose: &PlanarPose,
    truth: &PointCloud,
    truth_pose: &PlanarPose,
    stream: u64,
) -> Result<(f64, f64, f64, f64, f64)> {
    let cd = chamfer(estimate, truth)?;
    // One stream for both sides, so equal clouds draw equal samples.
    let a = estimate.resample(EMD_POINTS, &mut rng_for(EMD_SEED, stream))?;
    let b = truth.resample(EMD_POINTS, &mut rng_for(EMD_SEED, stream))?;
    let e = emd(&a, &b)?;
    Ok((
        cd,
        e,
        translation_error(pose, truth_pose),
        rotation_error(pose, truth_pose),
        rotation_error_folded(pose, truth_pose),
    ))
}

/// Runs `estimator` over every track in `mode` and scores each frame against
/// the posed ground-truth shape.
pub fn evaluate(tracks: &[Track], estimator: &dyn Estimator, mode: Mode) -> Result<ModeEvaluation> {
    let mut records = Vec::new();
    for track in tracks {
        if track.complete.is_empty() {
            return Err(Error::MissingGroundTruth(format!("track {} has no complete shape", track.id)));
        }
        let estimates = estimator.estimate(&track.clouds, mode)?;
        if estimates.len() != track.len() {
            return Err(Error::ShapeMismatch(format!(
                "estimator returned {} frames for track {} of {}",
                estimates.len(),
                track.id,
                track.len()
            )));
        }
        for (i, (cloud, pose)) in estimates.iter().enumerate() {
            let truth = track.complete_at(i);
            let (cd, e, trans_err, rot_err, folded) = frame_metrics(cloud, pose, &truth, &track.poses[i], i as u64)?;
            records.push(FrameRecord {
                track: track.id.clone(),
                report: MetricReport {
                    frame_index: i + 1,
                    cd,
                    emd: e,
                    trans_err,
                    rot_err,
                },
                rot_err_folded: folded,
            });
        }
    }
    let aggregate = aggregate(&records);
    Ok(ModeEvaluation {
        mode,
        records,
        aggregate,
    })
}

const METRICS: [(&str, &str); 4] = [
    ("cd", "Chamfer distance (m)"),
    ("emd", "EMD (m)"),
    ("trans_err", "Translation error (m)"),
    ("rot_err", "Rotation error (deg)"),
];

fn metric_value(m: &MetricMeans, key: &str) -> f64 {
    match key {
        "cd" => m.cd,
        "emd" => m.emd,
        "trans_err" => m.trans_err,
        _ => m.rot_err,
    }
}

/// Error versus detection count: one panel per metric, one polyline per
/// metric per mode.
pub fn evaluation_svg(eval: &Evaluation) -> String {
    let (pw, ph, margin) = (360.0, 220.0, 48.0);
    let width = 2.0 * (pw + margin) + margin;
    let height = 2.0 * (ph + margin) + margin;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let max_k = eval
        .modes
        .iter()
        .flat_map(|m| m.aggregate.by_detections.keys().copied())
        .max()
        .unwrap_or(1)
        .max(2);
    for (panel, (key, title)) in METRICS.iter().enumerate() {
        let ox = margin + (panel % 2) as f64 * (pw + margin);
        let oy = margin + (panel / 2) as f64 * (ph + margin);
        let ymax = eval
            .modes
            .iter()
            .flat_map(|m| m.aggregate.by_detections.values().map(|v| metric_value(v, key)))
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let _ = writeln!(
            s,
            r#"<rect x="{ox}" y="{oy}" width="{pw}" height="{ph}" fill="none" stroke="gray"/>"#
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{title}</text>"#, ox, oy - 6.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">detections</text>"#, ox + pw - 60.0, oy + ph + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{:.4}</text>"#, ox + 4.0, oy + 12.0, ymax);
        for (mi, m) in eval.modes.iter().enumerate() {
            let pts: Vec<String> = m
                .aggregate
                .by_detections
                .iter()
                .map(|(&k, v)| {
                    let x = ox + (k as f64 - 1.0) / (max_k as f64 - 1.0) * pw;
                    let y = oy + ph - metric_value(v, key) / ymax * ph;
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-metric="{key}" data-mode="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                m.mode.name(),
                colors[mi % colors.len()],
                pts.join(" ")
            );
        }
    }
    for (mi, m) in eval.modes.iter().enumerate() {
        let y = height - 12.0;
        let x = margin + mi as f64 * 140.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/><text x="{}" y="{y}">{}</text>"#,
            y - 4.0,
            x + 20.0,
            y - 4.0,
            colors[mi % colors.len()],
            x + 26.0,
            m.mode.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
