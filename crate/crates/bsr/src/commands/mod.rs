//! Library side of every CLI subcommand. Each `cmd_*` returns its result
//! table so tests can inspect it; writing files is optional and driven by
//! `out_dir`.

mod ablation;
mod bench;
mod eval;
mod pyramid;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use bsr_core::data::{bicubic_resize, crop, ResizeFactor};
use bsr_core::Tensor;

use crate::config::{AlphaName, RunConfig};
use crate::error::CliError;
use crate::io::load_dir;

pub use ablation::{cmd_compare_alpha, cmd_depth_sweep, AlphaRow, DepthRow};
pub use bench::{cmd_bench, BenchReport, BenchRow};
pub use eval::{cmd_eval, cmd_upscale, evaluate, BicubicUpsampler, EvalReport, EvalRow, Upsampler};
pub use pyramid::{analyze_pyramid, cmd_analyze_pyramid, HistogramRow, PyramidReport, PyramidSummaryRow};
pub use train::{cmd_train, train_model, TrainOutcome, LOG_FILE, MODEL_FILE};

/// Where the base config comes from: a TOML file or a built-in preset.
#[derive(Clone, Debug, Default)]
pub struct ConfigSource {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
}

/// Command-line overrides applied on top of the base config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub scale: Option<usize>,
    pub blocks: Option<usize>,
    pub alpha_mode: Option<AlphaName>,
    pub binarize: Option<bool>,
}

impl ConfigSource {
    pub fn preset(name: &str) -> ConfigSource {
        ConfigSource {
            config: None,
            preset: Some(name.into()),
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> ConfigSource {
        ConfigSource {
            config: Some(path.into()),
            preset: None,
        }
    }

    pub fn resolve(&self, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (Some(_), Some(_)) => return Err(CliError::Config("give either --config or --preset, not both".into())),
            (None, None) => return Err(CliError::Config("one of --config or --preset is required".into())),
        };
        overrides.apply(&mut cfg);
        cfg.model_config()?;
        cfg.train_config()?;
        Ok(cfg)
    }

    fn record(&self, manifest: &mut crate::report::RunManifest) {
        manifest.config_path = self.config.as_ref().map(|p| p.display().to_string());
        manifest.preset = self.preset.clone();
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = self.scale {
            cfg.model.scale = s;
        }
        if let Some(b) = self.blocks {
            cfg.model.blocks = b;
        }
        if let Some(a) = self.alpha_mode {
            cfg.model.alpha_mode = a;
        }
        if let Some(b) = self.binarize {
            cfg.model.binarize = b;
        }
    }
}

/// Named HR images, cropped so both sides divide the scale.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<(String, Tensor)>,
    pub val: Vec<(String, Tensor)>,
}

/// Reads `dir/train` and `dir/val` when present, otherwise treats `dir` as a
/// flat training set with no validation images.
pub fn load_dataset(dir: &Path, scale: usize) -> Result<Dataset, CliError> {
    let (train_dir, val_dir) = (dir.join("train"), dir.join("val"));
    let (train, val) = if train_dir.is_dir() {
        let val = if val_dir.is_dir() { load_dir(&val_dir)? } else { Vec::new() };
        (load_dir(&train_dir)?, val)
    } else {
        (load_dir(dir)?, Vec::new())
    };
    Ok(Dataset {
        train: crop_all(train, scale)?,
        val: crop_all(val, scale)?,
    })
}

/// Images to evaluate on: `dir/val` when present, otherwise every PNG in `dir`.
pub fn load_eval_images(dir: &Path, scale: usize) -> Result<Vec<(String, Tensor)>, CliError> {
    let val_dir = dir.join("val");
    crop_all(load_dir(if val_dir.is_dir() { &val_dir } else { dir })?, scale)
}

fn crop_all(images: Vec<(String, Tensor)>, scale: usize) -> Result<Vec<(String, Tensor)>, CliError> {
    images.into_iter().map(|(name, img)| Ok((name.clone(), crop_to_scale(&img, scale).map_err(|e| CliError::Data(format!("{name}: {e}")))?))).collect()
}

/// Crops the bottom/right edge so height and width are multiples of `scale`.
pub fn crop_to_scale(img: &Tensor, scale: usize) -> Result<Tensor, bsr_core::Error> {
    let s = img.shape();
    let (h, w) = (s.h / scale * scale, s.w / scale * scale);
    if h == 0 || w == 0 {
        return Err(bsr_core::Error::InvalidArgument(format!("image {}x{} is smaller than the scale {scale}", s.h, s.w)));
    }
    crop(img, 0, 0, h, w)
}

/// `(lr, hr)` pairs with LR made by bicubic downscaling.
pub fn lr_hr_pairs(images: &[(String, Tensor)], scale: usize) -> Result<Vec<(Tensor, Tensor)>, CliError> {
    let factor = ResizeFactor::down(scale)?;
    images.iter().map(|(_, hr)| Ok((bicubic_resize(hr, factor)?, hr.clone()))).collect()
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}
