//! The run configuration file (TOML) with per-section defaults. Unknown
//! keys are rejected everywhere, and every artifact a run produces carries
//! the SHA-256 of the effective (post-override) configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use blindt60::dataset::{DatasetConfig, MaskKind, NoiseRirPolicy, NoiseSource, SpeechSource};
use blindt60::dsp::StftConfig;
use blindt60::error::{Error, Result};
use blindt60::hash::sha256_hex;
use blindt60::train::{LossReduction, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomDims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

fn default_rooms() -> Vec<RoomDims> {
    // Three simulated-room geometries plus four measured-room footprints
    // from the evaluation tables.
    [
        (3.85, 5.33, 3.86),
        (3.81, 4.65, 2.62),
        (4.48, 6.96, 3.12),
        (3.32, 4.83, 2.95),
        (4.47, 5.13, 3.18),
        (6.16, 4.72, 2.80),
        (5.20, 4.26, 3.65),
    ]
    .iter()
    .map(|&(length, width, height)| RoomDims {
        length,
        width,
        height,
    })
    .collect()
}

fn default_targets() -> Vec<f64> {
    vec![0.3, 0.7, 1.2]
}

fn default_distances() -> Vec<f64> {
    vec![0.7, 1.0, 1.7, 2.0, 2.5]
}

fn default_angles() -> Vec<f64> {
    (-45..=45).step_by(10).map(|a| a as f64).collect()
}

fn default_rir_rate() -> u32 {
    16000
}

fn default_one() -> usize {
    1
}

fn default_scattering() -> f64 {
    0.7
}

fn default_seed_rirs() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RirsSection {
    #[serde(default = "default_rir_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_rooms")]
    pub rooms: Vec<RoomDims>,
    #[serde(default = "default_targets")]
    pub targets_t60: Vec<f64>,
    #[serde(default = "default_one")]
    pub geometries_per_room: usize,
    #[serde(default = "default_distances")]
    pub distances_m: Vec<f64>,
    #[serde(default = "default_angles")]
    pub angles_deg: Vec<f64>,
    #[serde(default = "default_scattering")]
    pub scattering: f64,
    #[serde(default = "default_seed_rirs")]
    pub seed: u64,
}

impl Default for RirsSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn default_data_rate() -> u32 {
    16000
}

fn default_duration() -> f64 {
    4.0
}

fn default_snr_grid() -> Vec<f64> {
    vec![0.0, 10.0, 20.0]
}

fn default_speech_count() -> usize {
    2
}

fn default_seed_data() -> u64 {
    2
}

fn default_split() -> String {
    "train".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_data_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_snr_grid")]
    pub snr_grid_db: Vec<f64>,
    /// Synthetic speech utterances per dataset (ignored when
    /// `speech_folder` is set).
    #[serde(default = "default_speech_count")]
    pub speech_count: usize,
    #[serde(default)]
    pub speech_folder: Option<PathBuf>,
    #[serde(default)]
    pub noise_folder: Option<PathBuf>,
    #[serde(default)]
    pub noise_rir_policy: NoiseRirPolicy,
    #[serde(default)]
    pub mask_kind: MaskKind,
    #[serde(default = "default_seed_data")]
    pub seed: u64,
    #[serde(default = "default_split")]
    pub split: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl DatasetSection {
    pub fn to_config(&self) -> DatasetConfig {
        DatasetConfig {
            sample_rate: self.sample_rate,
            duration: self.duration,
            snr_grid_db: self.snr_grid_db.clone(),
            speech: match &self.speech_folder {
                Some(path) => SpeechSource::Folder { path: path.clone() },
                None => SpeechSource::Synthetic {
                    count: self.speech_count,
                },
            },
            noise: match &self.noise_folder {
                Some(path) => NoiseSource::Folder { path: path.clone() },
                None => NoiseSource::Synthetic,
            },
            noise_rir_policy: self.noise_rir_policy,
            mask_kind: self.mask_kind,
            seed: self.seed,
            split: self.split.clone(),
        }
    }
}

fn default_window() -> usize {
    320
}

fn default_hop() -> usize {
    160
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftSection {
    #[serde(default = "default_window")]
    pub window_len: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    #[serde(default = "default_window")]
    pub fft_len: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl StftSection {
    pub fn to_config(&self) -> StftConfig {
        StftConfig {
            window_len: self.window_len,
            hop: self.hop,
            fft_len: self.fft_len,
        }
    }
}

fn default_preset() -> String {
    "desk".into()
}

fn default_seed_model() -> u64 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_seed_model")]
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn default_alpha() -> f64 {
    0.5
}

fn default_lambda() -> f64 {
    0.1
}

fn default_stage1_lr() -> f64 {
    1e-3
}

fn default_stage2_ne_lr() -> f64 {
    1e-4
}

fn default_stage2_re_lr() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    60
}

fn default_batch() -> usize {
    8
}

fn default_patience() -> usize {
    3
}

fn default_clip() -> f64 {
    5.0
}

fn default_reduction() -> LossReduction {
    LossReduction::Mean
}

fn default_seed_train() -> u64 {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_stage1_lr")]
    pub stage1_lr: f64,
    #[serde(default = "default_stage2_ne_lr")]
    pub stage2_ne_lr: f64,
    #[serde(default = "default_stage2_re_lr")]
    pub stage2_re_lr: f64,
    #[serde(default = "default_epochs")]
    pub stage1_epochs: usize,
    #[serde(default = "default_epochs")]
    pub stage2_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_reduction")]
    pub loss_reduction: LossReduction,
    #[serde(default = "default_seed_train")]
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            stage1_lr: self.stage1_lr,
            stage2_ne_lr: self.stage2_ne_lr,
            stage2_re_lr: self.stage2_re_lr,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            batch_size: self.batch_size,
            plateau_patience: self.plateau_patience,
            grad_clip: self.grad_clip,
            loss_reduction: self.loss_reduction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub rirs: RirsSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub stft: StftSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::config(format!("cannot read config {}: {}", path.display(), e))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {}", path.display(), e)))
            }
        }
    }

    /// Hash of the effective configuration (after flag overrides).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }
}
