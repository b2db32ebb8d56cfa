//! The sequential estimator: a two-layer PointNet encoder, a single GRU cell
//! fusing features over time, and MLP decoders for the completed shape and
//! the planar pose.

mod checkpoint;
mod weights;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, MIN_ROTATION_NORM};
use crate::error::{Error, Result};
use crate::geometry::{demean, reattach, Centroid, PlanarPose, PointCloud};
use crate::rng::derive_seed;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use weights::{BoundWeights, Dense, GruWeights, ModelWeights, ParamGroup};

/// Frames with fewer points than this are not fed to the network.
pub const MIN_FRAME_POINTS: usize = 5;

/// Base seed of the per-frame input resampling stream.
pub const RESAMPLE_SEED: u64 = 0x5EC0_F17E;

fn default_n_in() -> usize {
    256
}
fn default_n_out() -> usize {
    1024
}
fn default_encoder1() -> Vec<usize> {
    vec![64, 128]
}
fn default_encoder2() -> Vec<usize> {
    vec![256, 512]
}
fn default_hidden() -> usize {
    512
}
fn default_shape_decoder() -> Vec<usize> {
    vec![512, 1024]
}
fn default_pose_decoder() -> Vec<usize> {
    vec![256, 64]
}

/// Network sizes. The encoder output size is the last `encoder2` width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_n_in")]
    pub n_in: usize,
    #[serde(default = "default_n_out")]
    pub n_out: usize,
    /// Widths of the first shared per-point MLP, starting from the 3 inputs.
    #[serde(default = "default_encoder1")]
    pub encoder1: Vec<usize>,
    /// Widths of the second shared MLP, applied to point features
    /// concatenated with the first global feature.
    #[serde(default = "default_encoder2")]
    pub encoder2: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// Hidden widths of the shape decoder; its output is `3 * n_out`.
    #[serde(default = "default_shape_decoder")]
    pub shape_decoder: Vec<usize>,
    /// Hidden widths of the pose decoder; its output is `(tx, ty, s, c)`.
    #[serde(default = "default_pose_decoder")]
    pub pose_decoder: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_in: default_n_in(),
            n_out: default_n_out(),
            encoder1: default_encoder1(),
            encoder2: default_encoder2(),
            hidden_dim: default_hidden(),
            shape_decoder: default_shape_decoder(),
            pose_decoder: default_pose_decoder(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_in, self.n_out, self.hidden_dim];
        let lists = [&self.encoder1, &self.encoder2, &self.shape_decoder, &self.pose_decoder];
        if dims.contains(&0) || lists.iter().any(|l| l.contains(&0)) {
            return Err(Error::Config("model dimensions must all be at least 1".into()));
        }
        if self.encoder1.is_empty() || self.encoder2.is_empty() {
            return Err(Error::Config("encoder layer lists must not be empty".into()));
        }
        Ok(())
    }

    pub fn feat_dim(&self) -> usize {
        *self.encoder2.last().expect("validated config")
    }

    pub(crate) fn global1_dim(&self) -> usize {
        *self.encoder1.last().expect("validated config")
    }
}

/// GRU state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(dim: usize) -> Self {
        Self { h: vec![0.0; dim] }
    }

    fn to_tensor(&self) -> Tensor {
        Tensor::row(self.h.clone())
    }
}

/// Whether the hidden state is carried across frames or reset every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sequential,
    PerFrame,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sequential => "sequential",
            Mode::PerFrame => "per_frame",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "per_frame" => Ok(Mode::PerFrame),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected sequential or per_frame)"))),
        }
    }
}

/// Output for one frame, in the measurement frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEstimate {
    pub cloud: PointCloud,
    pub pose: PlanarPose,
    pub hidden: HiddenState,
    /// True when the frame had too few points and the estimate was carried.
    pub skipped: bool,
}

/// Demeaned, resampled network input for one frame, or `None` when the frame
/// is too sparse. The returned centroid is the mean of the full measurement.
pub fn prepare_input(cloud: &PointCloud, n_in: usize, frame_index: usize) -> Result<Option<(Tensor, Centroid)>> {
    if cloud.len() < MIN_FRAME_POINTS {
        return Ok(None);
    }
    let (centered, centroid) = demean(cloud)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(RESAMPLE_SEED, frame_index as u64));
    let sampled = centered.resample(n_in, &mut rng)?;
    Ok(Some((Tensor::matrix(n_in, 3, sampled.to_row_major())?, centroid)))
}

fn mlp(tape: &mut Tape<'_>, mut x: Var, layers: &[(Var, Var)]) -> Result<Var> {
    for (i, &(w, b)) in layers.iter().enumerate() {
        x = tape.matmul(x, w)?;
        x = tape.add_bias(x, b)?;
        if i + 1 < layers.len() {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

/// Records the encoder on `tape` for an `n x 3` input, returning `1 x feat_dim`.
pub fn encode_on(tape: &mut Tape<'_>, w: &BoundWeights, points: Var) -> Result<Var> {
    let n = tape.value(points).dims2()?.0;
    if n == 0 {
        return Err(Error::DegenerateInput("cannot encode an empty cloud".into()));
    }
    let local = mlp(tape, points, &w.encoder1)?;
    let global = tape.max_over_rows(local)?;
    let spread = tape.repeat_rows(global, n)?;
    let joined = tape.concat(local, spread)?;
    let local2 = mlp(tape, joined, &w.encoder2)?;
    tape.max_over_rows(local2)
}

/// Records one GRU update.
pub fn fuse_on(tape: &mut Tape<'_>, w: &BoundWeights, h_prev: Var, f: Var) -> Result<Var> {
    let g = &w.gru;
    let gate = |tape: &mut Tape<'_>, wf: Var, uh: Var, b: Var| -> Result<Var> {
        let a = tape.matmul(f, wf)?;
        let c = tape.matmul(h_prev, uh)?;
        let s = tape.add(a, c)?;
        tape.add_bias(s, b)
    };
    let z = gate(tape, g.w_z, g.u_z, g.b_z)?;
    let z = tape.sigmoid(z)?;
    let r = gate(tape, g.w_r, g.u_r, g.b_r)?;
    let r = tape.sigmoid(r)?;
    let wn = tape.matmul(f, g.w_n)?;
    let un = tape.matmul(h_prev, g.u_n)?;
    let gated = tape.mul(r, un)?;
    let pre = tape.add(wn, gated)?;
    let pre = tape.add_bias(pre, g.b_n)?;
    let n = tape.tanh(pre)?;
    // (1 - z) * n + z * h = n + z * (h - n)
    let diff = tape.sub(h_prev, n)?;
    let carried = tape.mul(z, diff)?;
    tape.add(n, carried)
}

/// Records the shape decoder, returning `n_out x 3` points.
pub fn decode_shape_on(tape: &mut Tape<'_>, w: &BoundWeights, h: Var, n_out: usize) -> Result<Var> {
    let flat = mlp(tape, h, &w.shape_decoder)?;
    tape.reshape(flat, n_out, 3)
}

/// Records the pose decoder, returning `1 x 4` parameters `(tx, ty, s, c)`.
pub fn decode_pose_on(tape: &mut Tape<'_>, w: &BoundWeights, h: Var) -> Result<Var> {
    mlp(tape, h, &w.pose_decoder)
}

/// Converts decoder output `(tx, ty, s, c)` into a pose with zero vertical offset.
pub fn pose_from_params(p: &[f64]) -> Result<PlanarPose> {
    let (tx, ty, s, c) = (p[0], p[1], p[2], p[3]);
    let norm = (s * s + c * c).sqrt();
    if norm < MIN_ROTATION_NORM || !norm.is_finite() {
        return Err(Error::DegenerateRotation { norm });
    }
    Ok(PlanarPose::new((s / norm).atan2(c / norm), tx, ty))
}

/// Encoder output for a demeaned cloud already resampled to `n_in` points.
pub fn encode(weights: &ModelWeights, cloud: &PointCloud) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = weights.bind_frozen(&mut tape)?;
    let x = tape.constant(Tensor::matrix(cloud.len(), 3, cloud.to_row_major())?)?;
    let f = encode_on(&mut tape, &bound, x)?;
    Ok(tape.value(f).data().to_vec())
}

pub fn fuse(weights: &ModelWeights, h_prev: &HiddenState, f: &[f64]) -> Result<HiddenState> {
    let mut tape = Tape::new();
    let bound = weights.bind_frozen(&mut tape)?;
    let h = tape.constant(h_prev.to_tensor())?;
    let f = tape.constant(Tensor::row(f.to_vec()))?;
    let out = fuse_on(&mut tape, &bound, h, f)?;
    Ok(HiddenState {
        h: tape.value(out).data().to_vec(),
    })
}

/// Decodes a hidden state into a cloud and pose in the demeaned frame.
pub fn decode(weights: &ModelWeights, h: &HiddenState) -> Result<(PointCloud, PlanarPose)> {
    let mut tape = Tape::new();
    let bound = weights.bind_frozen(&mut tape)?;
    let hv = tape.constant(h.to_tensor())?;
    let shape = decode_shape_on(&mut tape, &bound, hv, weights.config.n_out)?;
    let pose = decode_pose_on(&mut tape, &bound, hv)?;
    let cloud = PointCloud::from_row_major(tape.value(shape).data())?;
    Ok((cloud, pose_from_params(tape.value(pose).data())?))
}

/// Like [`decode`], but a degenerate rotation decodes as heading zero. Used
/// only for sparse leading frames, where the state may still be all zeros.
fn decode_with_fallback(weights: &ModelWeights, h: &HiddenState) -> Result<(PointCloud, PlanarPose)> {
    let mut tape = Tape::new();
    let bound = weights.bind_frozen(&mut tape)?;
    let hv = tape.constant(h.to_tensor())?;
    let shape = decode_shape_on(&mut tape, &bound, hv, weights.config.n_out)?;
    let pose = decode_pose_on(&mut tape, &bound, hv)?;
    let cloud = PointCloud::from_row_major(tape.value(shape).data())?;
    let p = tape.value(pose).data();
    let pose = match pose_from_params(p) {
        Err(Error::DegenerateRotation { .. }) => PlanarPose::new(0.0, p[0], p[1]),
        other => other?,
    };
    Ok((cloud, pose))
}

/// Runs the full pipeline over a track's measurements.
///
/// Sparse frames (fewer than [`MIN_FRAME_POINTS`]) keep the hidden state and
/// report the previous estimate shifted by the centroid change. With no
/// previous estimate the current state is decoded at the frame's centroid
/// (heading zero if the decoded rotation is degenerate).
pub fn estimate_sequence(weights: &ModelWeights, frames: &[PointCloud], mode: Mode) -> Result<Vec<FrameEstimate>> {
    if frames.is_empty() {
        return Err(Error::DegenerateInput("track has no frames".into()));
    }
    let cfg = &weights.config;
    let mut h = HiddenState::zeros(cfg.hidden_dim);
    let mut out: Vec<FrameEstimate> = Vec::with_capacity(frames.len());
    let mut last_centroid: Option<Centroid> = None;
    for (index, frame) in frames.iter().enumerate() {
        if mode == Mode::PerFrame {
            h = HiddenState::zeros(cfg.hidden_dim);
        }
        match prepare_input(frame, cfg.n_in, index)? {
            Some((input, centroid)) => {
                let cloud = PointCloud::from_row_major(input.data())?;
                let f = encode(weights, &cloud)?;
                h = fuse(weights, &h, &f)?;
                let (x, t) = decode(weights, &h)?;
                let (cloud, pose) = reattach(&x, &t, &centroid);
                out.push(FrameEstimate {
                    cloud,
                    pose,
                    hidden: h.clone(),
                    skipped: false,
                });
                last_centroid = Some(centroid);
            }
            None => {
                let centroid = match frame.mean() {
                    Some(mean) => Centroid { mean },
                    None => last_centroid.unwrap_or_else(Centroid::zero),
                };
                let estimate = match (out.last(), last_centroid) {
                    (Some(prev), Some(prev_c)) => {
                        let delta = centroid.mean - prev_c.mean;
                        FrameEstimate {
                            cloud: prev.cloud.translated(&delta),
                            pose: PlanarPose::translation(&delta).compose(&prev.pose),
                            hidden: h.clone(),
                            skipped: true,
                        }
                    }
                    _ => {
                        let (x, t) = decode_with_fallback(weights, &h)?;
                        let (cloud, pose) = reattach(&x, &t, &centroid);
                        FrameEstimate {
                            cloud,
                            pose,
                            hidden: h.clone(),
                            skipped: true,
                        }
                    }
                };
                out.push(estimate);
                last_centroid = Some(centroid);
            }
        }
    }
    Ok(out)
}

/// Anything that maps a track's measurements to per-frame cloud and pose
/// estimates in the sensor frame.
pub trait Estimator {
    fn estimate(&self, clouds: &[PointCloud], mode: Mode) -> Result<Vec<(PointCloud, PlanarPose)>>;
}

impl Estimator for ModelWeights {
    fn estimate(&self, clouds: &[PointCloud], mode: Mode) -> Result<Vec<(PointCloud, PlanarPose)>> {
        Ok(estimate_sequence(self, clouds, mode)?
            .into_iter()
            .map(|e| (e.cloud, e.pose))
            .collect())
    }
}

#[cfg(test)]
mod tests;
