//! TOML run configuration with `[model]` and `[train]` sections, plus the
//! built-in presets.

use std::fs;
use std::path::Path;

use bsr_core::model::ActKind;
use bsr_core::train::{Loss, Optimizer, TrainConfig};
use bsr_core::{AlphaMode, Family, SrModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Resnet,
    Pyramid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaName {
    Learnable,
    Deterministic,
}

impl From<AlphaName> for AlphaMode {
    fn from(a: AlphaName) -> Self {
        match a {
            AlphaName::Learnable => AlphaMode::Learnable,
            AlphaName::Deterministic => AlphaMode::Deterministic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActName {
    Leaky,
    Prelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    Mse,
    Charbonnier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: FamilyName,
    pub scale: usize,
    pub blocks: usize,
    pub channels: usize,
    pub binarize: bool,
    pub batch_norm: bool,
    pub alpha_mode: AlphaName,
    pub activation: ActName,
    pub slope: f32,
    pub head_kernel: usize,
    pub tail_kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub decay: f64,
    pub decay_interval: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations: usize,
    pub patch: usize,
    pub loss: LossName,
    pub charbonnier_eps: f32,
    pub optimizer: OptimizerName,
    pub momentum: f32,
    pub clip: f32,
    pub noise_std: f32,
    pub clamp_shadow: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
}

pub const PRESETS: &[&str] = &[
    "resnet-bin-2x",
    "resnet-bin-4x",
    "resnet-real-2x",
    "resnet-real-4x",
    "lapsrn-bin-4x",
    "lapsrn-real-4x",
    "desk",
];

fn resnet(scale: usize, binarize: bool) -> RunConfig {
    RunConfig {
        model: ModelSection {
            family: FamilyName::Resnet,
            scale,
            blocks: 16,
            channels: 64,
            binarize,
            batch_norm: true,
            alpha_mode: AlphaName::Learnable,
            activation: ActName::Leaky,
            slope: 0.25,
            head_kernel: 3,
            tail_kernel: 1,
        },
        train: TrainSection {
            lr: if binarize { 3e-4 } else { 1e-4 },
            decay: 0.9,
            decay_interval: 20,
            batch_size: 16,
            epochs: 500,
            iterations: 50,
            patch: 96,
            loss: LossName::Mse,
            charbonnier_eps: 1e-3,
            optimizer: OptimizerName::Adam,
            momentum: 0.9,
            clip: 5.0,
            noise_std: 0.01,
            clamp_shadow: false,
            seed: 0,
        },
    }
}

fn lapsrn(binarize: bool) -> RunConfig {
    let mut c = resnet(4, binarize);
    c.model = ModelSection {
        family: FamilyName::Pyramid,
        blocks: 10,
        batch_norm: false,
        slope: 0.2,
        tail_kernel: 3,
        ..c.model
    };
    c.train.lr = if binarize { 1e-4 } else { 3e-5 };
    c.train.decay = 0.8;
    c.train.decay_interval = 30;
    c.train.epochs = 300;
    c.train.iterations = 800;
    c.train.patch = 128;
    c.train.loss = LossName::Charbonnier;
    c
}

/// Small binarized model trained in minutes on a CPU.
fn desk() -> RunConfig {
    let mut c = resnet(2, true);
    c.model.blocks = 3;
    c.model.channels = 16;
    c.train.lr = DESK_LR;
    c.train.epochs = 30;
    c.train.patch = 32;
    c
}

pub const DESK_LR: f64 = 1e-2;

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig, CliError> {
        Ok(match name {
            "resnet-bin-2x" => resnet(2, true),
            "resnet-bin-4x" => resnet(4, true),
            "resnet-real-2x" => resnet(2, false),
            "resnet-real-4x" => resnet(4, false),
            "lapsrn-bin-4x" => lapsrn(true),
            "lapsrn-real-4x" => lapsrn(false),
            "desk" => desk(),
            other => {
                return Err(CliError::Config(format!(
                    "unknown preset `{other}`; available: {}",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self) -> Result<SrModelConfig, CliError> {
        let m = &self.model;
        let cfg = SrModelConfig {
            family: match m.family {
                FamilyName::Resnet => Family::ResnetSr,
                FamilyName::Pyramid => Family::PyramidSr,
            },
            scale: m.scale,
            num_residual_blocks: m.blocks,
            feature_channels: m.channels,
            binarize_residual: m.binarize,
            use_batch_norm: m.batch_norm,
            alpha_mode: m.alpha_mode.into(),
            activation: match m.activation {
                ActName::Leaky => ActKind::Leaky(m.slope),
                ActName::Prelu => ActKind::PRelu(m.slope),
            },
            head_kernel: m.head_kernel,
            tail_kernel: m.tail_kernel,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let cfg = TrainConfig {
            initial_lr: t.lr,
            decay_factor: t.decay,
            decay_interval_epochs: t.decay_interval,
            batch_size: t.batch_size,
            epochs: t.epochs,
            iterations_per_epoch: t.iterations,
            clip_lo: -t.clip,
            clip_hi: t.clip,
            loss: match t.loss {
                LossName::Mse => Loss::Mse,
                LossName::Charbonnier => Loss::Charbonnier(t.charbonnier_eps),
            },
            seed: t.seed,
            optimizer: match t.optimizer {
                OptimizerName::Adam => Optimizer::default(),
                OptimizerName::Sgd => Optimizer::Sgd { momentum: t.momentum },
            },
            patch: t.patch,
            noise_std: t.noise_std,
            clamp_shadow: t.clamp_shadow,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.patch % self.model.scale != 0 {
            return Err(CliError::Config(format!(
                "patch {} is not a multiple of scale {}",
                cfg.patch, self.model.scale
            )));
        }
        Ok(cfg)
    }
}
