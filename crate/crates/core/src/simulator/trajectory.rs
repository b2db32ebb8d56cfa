use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PlanarPose;

pub const TRAJECTORY_CSV_HEADER: &str = "t,x,y,theta";

/// Integration substeps per frame for curved paths.
const SUBSTEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Straight,
    Arc,
    SCurve,
    StopGo,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [Self::Straight, Self::Arc, Self::SCurve, Self::StopGo];

    pub fn name(self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::Arc => "arc",
            Self::SCurve => "s_curve",
            Self::StopGo => "stop_go",
        }
    }
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown trajectory kind {s:?}")))
    }
}

/// Parameters shared by all kinds; each kind reads the ones it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    pub start: [f64; 2],
    /// Initial heading (rad).
    pub heading: f64,
    /// Speed (m/s); the peak speed for stop_go.
    pub speed: f64,
    /// Signed turn radius for arc (m); positive turns left.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Peak heading deviation for s_curve (rad).
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Period of the s_curve weave or stop_go cycle (s).
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
}

fn default_radius() -> f64 {
    20.0
}
fn default_amplitude() -> f64 {
    0.3
}
fn default_period() -> f64 {
    2.0
}
fn default_rate() -> f64 {
    10.0
}

impl TrajectoryParams {
    pub fn new(start: [f64; 2], heading: f64, speed: f64) -> Self {
        Self {
            start,
            heading,
            speed,
            radius: default_radius(),
            amplitude: default_amplitude(),
            period: default_period(),
            rate_hz: default_rate(),
        }
    }
}

/// Timestamped planar poses of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub poses: Vec<PlanarPose>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, poses: Vec<PlanarPose>) -> Result<Self> {
        if times.is_empty() || times.len() != poses.len() {
            return Err(Error::Config(format!(
                "trajectory needs equal, non-zero counts of times ({}) and poses ({})",
                times.len(),
                poses.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("trajectory timestamps must strictly increase".into()));
        }
        Ok(Self { times, poses })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check(ok: bool, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(message.into()))
    }
}

/// Integrates unicycle kinematics with heading `heading(t)` and speed `speed(t)`.
fn integrate(p: &TrajectoryParams, n_frames: usize, heading: impl Fn(f64) -> f64, speed: impl Fn(f64) -> f64) -> Vec<PlanarPose> {
    let dt = 1.0 / p.rate_hz;
    let h = dt / SUBSTEPS as f64;
    let (mut x, mut y) = (p.start[0], p.start[1]);
    let mut poses = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        if f > 0 {
            let t0 = (f - 1) as f64 * dt;
            for s in 0..SUBSTEPS {
                let tm = t0 + (s as f64 + 0.5) * h;
                let (sn, cs) = heading(tm).sin_cos();
                x += h * speed(tm) * cs;
                y += h * speed(tm) * sn;
            }
        }
        poses.push(PlanarPose::new(heading(f as f64 * dt), x, y));
    }
    poses
}

pub fn make_trajectory(kind: TrajectoryKind, p: &TrajectoryParams, n_frames: usize) -> Result<Trajectory> {
    check(n_frames >= 1, "trajectory needs at least one frame")?;
    check(p.rate_hz > 0.0 && p.rate_hz.is_finite(), "trajectory rate_hz must be positive")?;
    check(p.speed >= 0.0 && p.speed.is_finite(), "trajectory speed must be non-negative")?;
    check(
        p.start.iter().all(|v| v.is_finite()) && p.heading.is_finite(),
        "trajectory start and heading must be finite",
    )?;
    let dt = 1.0 / p.rate_hz;
    let times: Vec<f64> = (0..n_frames).map(|i| i as f64 * dt).collect();
    let (sh, ch) = p.heading.sin_cos();
    let poses = match kind {
        TrajectoryKind::Straight => times
            .iter()
            .map(|&t| PlanarPose::new(p.heading, p.start[0] + p.speed * t * ch, p.start[1] + p.speed * t * sh))
            .collect(),
        TrajectoryKind::Arc => {
            check(p.radius != 0.0 && p.radius.is_finite(), "arc radius must be non-zero")?;
            let r = p.radius;
            let center = [p.start[0] - r * sh, p.start[1] + r * ch];
            times
                .iter()
                .map(|&t| {
                    let th = p.heading + p.speed * t / r;
                    PlanarPose::new(th, center[0] + r * th.sin(), center[1] - r * th.cos())
                })
                .collect()
        }
        TrajectoryKind::SCurve => {
            check(p.period > 0.0 && p.amplitude.is_finite(), "s_curve needs a positive period")?;
            let w = 2.0 * PI / p.period;
            integrate(p, n_frames, |t| p.heading + p.amplitude * (w * t).sin(), |_| p.speed)
        }
        TrajectoryKind::StopGo => {
            check(p.period > 0.0, "stop_go needs a positive period")?;
            let w = 2.0 * PI / p.period;
            times
                .iter()
                .map(|&t| {
                    let s = p.speed * (t / 2.0 - (w * t).sin() / (2.0 * w));
                    PlanarPose::new(p.heading, p.start[0] + s * ch, p.start[1] + s * sh)
                })
                .collect()
        }
    };
    Trajectory::new(times, poses)
}

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut s = format!("{TRAJECTORY_CSV_HEADER}\n");
    for (t, p) in traj.times.iter().zip(&traj.poses) {
        let _ = writeln!(s, "{t:?},{:?},{:?},{:?}", p.t[0], p.t[1], p.theta);
    }
    s
}

pub fn trajectory_from_csv(text: &str, origin: &Path) -> Result<Trajectory> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRAJECTORY_CSV_HEADER) {
        return Err(Error::parse(origin, format!("missing {TRAJECTORY_CSV_HEADER:?} header row")));
    }
    let mut times = Vec::new();
    let mut poses = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(origin, format!("row {}: expected numbers", n + 2)))?;
        if vals.len() != 4 || !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::parse(origin, format!("row {}: expected 4 finite fields", n + 2)));
        }
        times.push(vals[0]);
        poses.push(PlanarPose::new(vals[3], vals[1], vals[2]));
    }
    Trajectory::new(times, poses).map_err(|e| Error::parse(origin, e.to_string()))
}

pub fn load_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trajectory_from_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::wrap_angle;

    #[test]
    fn straight_steps_evenly() {
        let p = TrajectoryParams::new([1.0, 2.0], 0.3, 5.0);
        let tr = make_trajectory(TrajectoryKind::Straight, &p, 10).unwrap();
        assert_eq!(tr.len(), 10);
        for w in tr.poses.windows(2) {
            let d = (w[1].translation_xy() - w[0].translation_xy()).norm();
            assert!((d - 0.5).abs() < 1e-12);
            assert_eq!(w[0].theta, w[1].theta);
        }
    }

    #[test]
    fn arc_turns_by_arc_length_over_radius() {
        for r in [12.0, -7.5] {
            let p = TrajectoryParams {
                radius: r,
                ..TrajectoryParams::new([0.0, 0.0], 0.2, 6.0)
            };
            let tr = make_trajectory(TrajectoryKind::Arc, &p, 8).unwrap();
            let expected = 6.0 * 0.1 / r;
            for w in tr.poses.windows(2) {
                assert!((wrap_angle(w[1].theta - w[0].theta) - expected).abs() < 1e-12);
                // Chord of a circle of radius |r| subtending the heading change.
                let chord = (w[1].translation_xy() - w[0].translation_xy()).norm();
                assert!((chord - 2.0 * r.abs() * (expected / 2.0).abs().sin()).abs() < 1e-9);
            }
            assert_eq!(tr.poses[0].t, [0.0, 0.0]);
        }
    }

    #[test]
    fn curved_paths_keep_heading_tangent() {
        let p = TrajectoryParams::new([3.0, -1.0], 1.0, 4.0);
        for kind in [TrajectoryKind::SCurve, TrajectoryKind::StopGo] {
            let tr = make_trajectory(kind, &p, 20).unwrap();
            for w in tr.poses.windows(2) {
                let d = w[1].translation_xy() - w[0].translation_xy();
                if d.norm() < 1e-6 {
                    continue;
                }
                let mid = w[0].theta + wrap_angle(w[1].theta - w[0].theta) / 2.0;
                assert!(wrap_angle(d.y.atan2(d.x) - mid).abs() < 0.02, "{kind:?}");
            }
        }
    }

    #[test]
    fn stop_go_comes_to_rest() {
        let p = TrajectoryParams::new([0.0, 0.0], 0.0, 4.0);
        let tr = make_trajectory(TrajectoryKind::StopGo, &p, 21).unwrap();
        // Speed vanishes at whole periods (t = 2 s is frame 20).
        let d = (tr.poses[20].translation_xy() - tr.poses[19].translation_xy()).norm();
        let peak = (tr.poses[11].translation_xy() - tr.poses[10].translation_xy()).norm();
        assert!(d < 0.01 * peak);
        assert!((tr.poses[20].t[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params() {
        let p = TrajectoryParams::new([0.0, 0.0], 0.0, -1.0);
        assert!(matches!(make_trajectory(TrajectoryKind::Straight, &p, 3), Err(Error::Config(_))));
        let p = TrajectoryParams {
            radius: 0.0,
            ..TrajectoryParams::new([0.0, 0.0], 0.0, 1.0)
        };
        assert!(matches!(make_trajectory(TrajectoryKind::Arc, &p, 3), Err(Error::Config(_))));
        assert!(make_trajectory(TrajectoryKind::Straight, &TrajectoryParams::new([0.0, 0.0], 0.0, 1.0), 0).is_err());
        assert!("zigzag".parse::<TrajectoryKind>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = TrajectoryParams::new([3.0, -1.0], 1.0, 4.0);
        let tr = make_trajectory(TrajectoryKind::SCurve, &p, 15).unwrap();
        let back = trajectory_from_csv(&trajectory_to_csv(&tr), Path::new("t.csv")).unwrap();
        for (a, b) in tr.poses.iter().zip(&back.poses) {
            assert!((a.theta - b.theta).abs() < 1e-9 && (a.t[0] - b.t[0]).abs() < 1e-9 && (a.t[1] - b.t[1]).abs() < 1e-9);
        }
        assert_eq!(tr.times, back.times);
        assert!(trajectory_from_csv("x,y\n", Path::new("t.csv")).is_err());
        assert!(trajectory_from_csv("t,x,y,theta\n0,0,0\n", Path::new("t.csv")).is_err());
        assert!(trajectory_from_csv("t,x,y,theta\n0,0,0,0\n0,1,1,0\n", Path::new("t.csv")).is_err());
    }
}
