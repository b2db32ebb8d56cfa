use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use seqfit::amodal::{LabelScenario, DEFAULT_ALPHA};
use seqfit::model::{Mode, ModelConfig};
use seqfit::trainer::TrainConfig;
use seqfit::{Error, Result};

/// Reads a JSON config, rejecting unknown keys.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Directory that relative paths in `config` resolve against.
pub fn base_dir(config: &Path) -> PathBuf {
    match config.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
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

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSettings {
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    #[serde(default = "default_bptt")]
    pub bptt_max_len: usize,
    #[serde(default = "default_batch")]
    pub batch_tracks: usize,
}

impl Default for StageSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    #[serde(default)]
    pub model: ModelConfig,
    /// Seeds weight initialization and track shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Train only on tracks of these meshes.
    #[serde(default)]
    pub meshes: Option<Vec<String>>,
    #[serde(default)]
    pub stage1: StageSettings,
    #[serde(default)]
    pub stage2: StageSettings,
    #[serde(default)]
    pub stage3: StageSettings,
}

impl TrainRun {
    pub fn stage_config(&self, stage: u8, seed: u64, mode: Mode) -> TrainConfig {
        let s = match stage {
            1 => &self.stage1,
            2 => &self.stage2,
            _ => &self.stage3,
        };
        TrainConfig {
            stage,
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            seed,
            grad_clip_norm: s.grad_clip_norm,
            bptt_max_len: s.bptt_max_len,
            batch_tracks: s.batch_tracks,
            mode,
        }
    }
}

fn both_modes() -> Vec<Mode> {
    vec![Mode::Sequential, Mode::PerFrame]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    /// Evaluate only tracks of these meshes.
    #[serde(default)]
    pub meshes: Option<Vec<String>>,
    #[serde(default = "both_modes")]
    pub modes: Vec<Mode>,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            meshes: None,
            modes: both_modes(),
        }
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRun {
    #[serde(default)]
    pub mode: Option<LabelScenario>,
    /// Camera JSON file.
    pub camera: PathBuf,
    /// Dataset directory for the ground-truth driven modes.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Label only these track ids.
    #[serde(default)]
    pub tracks: Option<Vec<String>>,
    /// Instance manifest for `sequential_completion_external`.
    #[serde(default)]
    pub external: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub fill_holes: bool,
}
