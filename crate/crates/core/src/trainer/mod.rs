//! Three-stage training: shape branch on Chamfer, pose decoder alone on the
//! pose loss, then everything jointly under learned uncertainty weights.

mod adam;
mod eval;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::PlanarPose;
use crate::model::{
    decode_pose_on, decode_shape_on, encode_on, fuse_on, prepare_input, Mode, ModelConfig, ModelWeights, ParamGroup,
};
use crate::rng::rng_for;
use crate::simulator::Track;

pub use adam::{clip_global_norm, Adam, BETA1, BETA2, EPSILON};
pub use eval::{
    aggregate, evaluate, evaluation_svg, Aggregate, Evaluation, FrameRecord, MetricMeans, ModeEvaluation,
    EMD_POINTS, EMD_SEED,
};

pub const TRAIN_LOG_HEADER: &str = "step,stage,loss,l_cd,l_p,sigma_cd,sigma_p";

/// Default learning rate of each stage.
pub fn default_learning_rate(stage: u8) -> f64 {
    match stage {
        3 => 1e-4,
        _ => 1e-3,
    }
}

fn default_epochs() -> usize {
    10
}
fn default_clip() -> f64 {
    5.0
}
fn default_bptt() -> usize {
    30
}
fn default_batch() -> usize {
    1
}
fn default_mode() -> Mode {
    Mode::Sequential
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    /// Defaults to [`default_learning_rate`] of the stage.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_bptt")]
    pub bptt_max_len: usize,
    #[serde(default = "default_batch")]
    pub batch_tracks: usize,
    /// `per_frame` trains the single-frame baseline: the hidden state is
    /// reset before every frame.
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

impl TrainConfig {
    pub fn new(stage: u8) -> Self {
        Self {
            stage,
            learning_rate: None,
            epochs: default_epochs(),
            seed: 0,
            grad_clip_norm: default_clip(),
            bptt_max_len: default_bptt(),
            batch_tracks: default_batch(),
            mode: default_mode(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| default_learning_rate(self.stage))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::Config(format!("stage must be 1, 2 or 3, got {}", self.stage)));
        }
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {lr}")));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        if self.bptt_max_len == 0 {
            return Err(Error::Config("bptt_max_len must be at least 1".into()));
        }
        if self.batch_tracks == 0 {
            return Err(Error::Config("batch_tracks must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameter groups a stage updates.
pub fn stage_trains(stage: u8, group: ParamGroup) -> bool {
    match stage {
        1 => matches!(group, ParamGroup::Encoder | ParamGroup::Gru | ParamGroup::ShapeDecoder),
        2 => group == ParamGroup::PoseDecoder,
        _ => true,
    }
}

/// Supervision for one usable frame, all in that frame's demeaned coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTarget {
    /// Network input, `n_in x 3`.
    pub input: Tensor,
    /// Ground-truth complete cloud, posed and demeaned, `m x 3`.
    pub target: Tensor,
    /// Ground-truth pose of the demeaned measurement.
    pub pose: PlanarPose,
}

/// A track turned into per-frame training targets; sparse frames are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrack {
    pub frames: Vec<Option<FrameTarget>>,
}

pub fn prepare_track(track: &Track, cfg: &ModelConfig) -> Result<PreparedTrack> {
    if track.complete.is_empty() {
        return Err(Error::MissingGroundTruth(format!("track {} has no complete shape", track.id)));
    }
    let mut frames = Vec::with_capacity(track.len());
    for (i, cloud) in track.clouds.iter().enumerate() {
        frames.push(match prepare_input(cloud, cfg.n_in, i)? {
            None => None,
            Some((input, centroid)) => {
                let target = track.complete_at(i).translated(&-centroid.mean);
                Some(FrameTarget {
                    input,
                    target: Tensor::matrix(target.len(), 3, target.to_row_major())?,
                    pose: PlanarPose::translation(&-centroid.mean).compose(&track.poses[i]),
                })
            }
        });
    }
    Ok(PreparedTrack { frames })
}

/// Loss values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub loss: f64,
    pub l_cd: f64,
    pub l_p: f64,
    /// Frames that contributed.
    pub frames: usize,
}

struct WindowGraph {
    loss: Var,
    l_cd: Var,
    l_p: Var,
    h_last: Var,
}

/// Records the stage objective over `frames` starting from state `h0`.
/// Returns `None` for the graph when every frame is sparse.
fn record_window<'a>(
    tape: &mut Tape<'a>,
    weights: &'a ModelWeights,
    frames: &'a [Option<FrameTarget>],
    h0: Tensor,
    stage: u8,
    mode: Mode,
) -> Result<(Option<WindowGraph>, usize, Vec<Var>)> {
    let bound = weights.bind(tape, |g| stage_trains(stage, g))?;
    let cfg = &weights.config;
    let h_start = tape.constant(h0)?;
    let zero_h = tape.constant(Tensor::zeros(&[1, cfg.hidden_dim]))?;
    let mut h = h_start;
    let mut cd_terms = Vec::new();
    let mut pose_terms = Vec::new();
    for frame in frames {
        if mode == Mode::PerFrame {
            h = zero_h;
        }
        let Some(frame) = frame else { continue };
        let x = tape.constant_ref(&frame.input)?;
        let f = encode_on(tape, &bound, x)?;
        h = fuse_on(tape, &bound, h, f)?;
        let target = tape.constant_ref(&frame.target)?;
        let shape = decode_shape_on(tape, &bound, h, cfg.n_out)?;
        cd_terms.push(tape.chamfer(shape, target)?);
        let pose = decode_pose_on(tape, &bound, h)?;
        pose_terms.push(tape.pose_loss(pose, &frame.pose, &frame.target)?);
    }
    let vars = bound.vars();
    let count = cd_terms.len();
    if count == 0 {
        return Ok((None, 0, vars));
    }
    let mean_of = |tape: &mut Tape<'a>, terms: &[Var]| -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        tape.scale(acc, 1.0 / terms.len() as f64)
    };
    let l_cd = mean_of(tape, &cd_terms)?;
    let l_p = mean_of(tape, &pose_terms)?;
    let loss = match stage {
        1 => l_cd,
        2 => l_p,
        _ => joint_loss(tape, l_cd, l_p, bound.s_cd, bound.s_p)?,
    };
    Ok((Some(WindowGraph { loss, l_cd, l_p, h_last: h }), count, vars))
}

/// `0.5 e^{-s_cd} L_cd + 0.5 e^{-s_p} L_p + 0.5 (s_cd + s_p)`, which is
/// `L_cd / 2σ_cd² + L_p / 2σ_p² + log(σ_cd σ_p)` with `s = log σ²`.
pub fn joint_loss(tape: &mut Tape<'_>, l_cd: Var, l_p: Var, s_cd: Var, s_p: Var) -> Result<Var> {
    let term = |tape: &mut Tape<'_>, l: Var, s: Var| -> Result<Var> {
        let neg = tape.scale(s, -1.0)?;
        let w = tape.exp(neg)?;
        let weighted = tape.mul(w, l)?;
        tape.scale(weighted, 0.5)
    };
    let a = term(tape, l_cd, s_cd)?;
    let b = term(tape, l_p, s_p)?;
    let s = tape.add(s_cd, s_p)?;
    let reg = tape.scale(s, 0.5)?;
    let sum = tape.add(a, b)?;
    tape.add(sum, reg)
}

/// Objective and gradients of one window. Gradients are in canonical
/// parameter order, `None` for parameters the stage does not train.
pub struct WindowResult {
    pub breakdown: LossBreakdown,
    pub grads: Vec<Option<Tensor>>,
    pub h_last: Vec<f64>,
}

pub fn window_gradients(
    weights: &ModelWeights,
    frames: &[Option<FrameTarget>],
    h0: &[f64],
    stage: u8,
    mode: Mode,
) -> Result<Option<WindowResult>> {
    let mut tape = Tape::new();
    let (graph, count, vars) = record_window(&mut tape, weights, frames, Tensor::row(h0.to_vec()), stage, mode)?;
    let Some(graph) = graph else { return Ok(None) };
    let mut grads = tape.backward(graph.loss)?;
    let grads = vars.iter().map(|&v| grads.take(v)).collect();
    Ok(Some(WindowResult {
        breakdown: LossBreakdown {
            loss: tape.value(graph.loss).item()?,
            l_cd: tape.value(graph.l_cd).item()?,
            l_p: tape.value(graph.l_p).item()?,
            frames: count,
        },
        grads,
        h_last: tape.value(graph.h_last).data().to_vec(),
    }))
}

/// Objective value only, for finite-difference checks and validation.
pub fn window_loss(
    weights: &ModelWeights,
    frames: &[Option<FrameTarget>],
    h0: &[f64],
    stage: u8,
    mode: Mode,
) -> Result<Option<LossBreakdown>> {
    Ok(window_value(weights, frames, h0, stage, mode)?.map(|r| r.0))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub stage: u8,
    pub loss: f64,
    pub l_cd: f64,
    pub l_p: f64,
    pub sigma_cd: f64,
    pub sigma_p: f64,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.stage, r.loss, r.l_cd, r.l_p, r.sigma_cd, r.sigma_p
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub log: Vec<LogRow>,
    /// Global optimizer step counter after this stage.
    pub step: u64,
}

/// Runs one stage. Every optimizer step averages the window gradients of
/// `batch_tracks` tracks; tracks are shuffled per epoch from the seed.
pub fn train_stage(tracks: &[Track], weights: ModelWeights, cfg: &TrainConfig, start_step: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if tracks.is_empty() {
        return Err(Error::MissingGroundTruth("no training tracks".into()));
    }
    let prepared = tracks
        .iter()
        .map(|t| prepare_track(t, &weights.config))
        .collect::<Result<Vec<_>>>()?;
    train_prepared(&prepared, weights, cfg, start_step)
}

pub fn train_prepared(
    prepared: &[PreparedTrack],
    mut weights: ModelWeights,
    cfg: &TrainConfig,
    start_step: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sizes: Vec<usize> = weights.named_tensors().iter().map(|(_, _, t)| t.numel()).collect();
    let mut adam = Adam::new(&sizes);
    let mut log = Vec::new();
    let mut step = start_step;
    let hidden = weights.config.hidden_dim;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, epoch as u64));
        for batch in order.chunks(cfg.batch_tracks) {
            let mut acc: Vec<Option<Tensor>> = vec![None; sizes.len()];
            let (mut windows, mut sums) = (0usize, [0.0f64; 3]);
            for &ti in batch {
                let mut h = vec![0.0; hidden];
                for window in prepared[ti].frames.chunks(cfg.bptt_max_len) {
                    let Some(res) = window_gradients(&weights, window, &h, cfg.stage, cfg.mode)? else {
                        continue;
                    };
                    h = res.h_last;
                    windows += 1;
                    sums[0] += res.breakdown.loss;
                    sums[1] += res.breakdown.l_cd;
                    sums[2] += res.breakdown.l_p;
                    for (slot, g) in acc.iter_mut().zip(res.grads) {
                        match (slot.as_mut(), g) {
                            (Some(a), Some(g)) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                            (None, Some(g)) => *slot = Some(g),
                            _ => {}
                        }
                    }
                }
            }
            if windows == 0 {
                continue;
            }
            let inv = 1.0 / windows as f64;
            for g in acc.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            clip_global_norm(&mut acc, cfg.grad_clip_norm);
            {
                let mut params: Vec<&mut Tensor> = weights.named_tensors_mut().into_iter().map(|(_, _, t)| t).collect();
                adam.step(&mut params, &acc, cfg.lr());
            }
            if !weights.is_finite() {
                return Err(Error::NonFinite(format!("weights diverged at step {}", step + 1)));
            }
            step += 1;
            log.push(LogRow {
                step,
                stage: cfg.stage,
                loss: sums[0] * inv,
                l_cd: sums[1] * inv,
                l_p: sums[2] * inv,
                sigma_cd: weights.sigma_cd(),
                sigma_p: weights.sigma_p(),
            });
        }
    }
    Ok(TrainOutcome { weights, log, step })
}

/// Stage 1: encoder, GRU and shape decoder on the Chamfer loss.
pub fn stage1_train(tracks: &[Track], weights: ModelWeights, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_stage(tracks, weights, &TrainConfig { stage: 1, ..cfg.clone() }, 0)
}

/// Stage 2: pose decoder alone on the pose loss.
pub fn stage2_train(tracks: &[Track], weights: ModelWeights, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_stage(tracks, weights, &TrainConfig { stage: 2, ..cfg.clone() }, 0)
}

/// Stage 3: all parameters on the uncertainty-weighted joint loss.
pub fn stage3_train(tracks: &[Track], weights: ModelWeights, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_stage(tracks, weights, &TrainConfig { stage: 3, ..cfg.clone() }, 0)
}

/// Mean objective over every window of `prepared`, without updates.
pub fn mean_loss(prepared: &[PreparedTrack], weights: &ModelWeights, stage: u8, mode: Mode, bptt: usize) -> Result<LossBreakdown> {
    let mut sums = [0.0f64; 3];
    let (mut windows, mut frames) = (0usize, 0usize);
    for track in prepared {
        let mut h = vec![0.0; weights.config.hidden_dim];
        for window in track.frames.chunks(bptt.max(1)) {
            if let Some(res) = window_value(weights, window, &h, stage, mode)? {
                sums[0] += res.0.loss;
                sums[1] += res.0.l_cd;
                sums[2] += res.0.l_p;
                frames += res.0.frames;
                windows += 1;
                h = res.1;
            }
        }
    }
    if windows == 0 {
        return Err(Error::MissingGroundTruth("no usable frames".into()));
    }
    let inv = 1.0 / windows as f64;
    Ok(LossBreakdown {
        loss: sums[0] * inv,
        l_cd: sums[1] * inv,
        l_p: sums[2] * inv,
        frames,
    })
}

fn window_value(
    weights: &ModelWeights,
    frames: &[Option<FrameTarget>],
    h0: &[f64],
    stage: u8,
    mode: Mode,
) -> Result<Option<(LossBreakdown, Vec<f64>)>> {
    let mut tape = Tape::new();
    let (graph, count, _) = record_window(&mut tape, weights, frames, Tensor::row(h0.to_vec()), stage, mode)?;
    let Some(graph) = graph else { return Ok(None) };
    Ok(Some((
        LossBreakdown {
            loss: tape.value(graph.loss).item()?,
            l_cd: tape.value(graph.l_cd).item()?,
            l_p: tape.value(graph.l_p).item()?,
            frames: count,
        },
        tape.value(graph.h_last).data().to_vec(),
    )))
}
