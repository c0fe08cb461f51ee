use std::fs;
use std::path::Path;

use bsr_core::train::{evaluate_psnr, train_with, TrainData, TrainingLog};
use bsr_core::{SrModel, Tensor};
use log::info;

use super::{ensure_dir, load_dataset, lr_hr_pairs, ConfigSource, Dataset, Overrides};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::format::save_model;
use crate::report::{write_log, RunManifest};

pub const MODEL_FILE: &str = "model.bsrn";
pub const LOG_FILE: &str = "log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SrModel,
    pub log: TrainingLog,
    /// Mean validation PSNR-Y of the trained model.
    pub val_psnr: Option<f64>,
    /// Mean validation PSNR-Y of plain bicubic upsampling.
    pub bicubic_psnr: Option<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.train_loss)
    }
}

/// Builds the model from `cfg.train.seed` and trains it in memory.
pub fn train_model(cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome, CliError> {
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    if train_cfg.epochs > 0 {
        if data.train.is_empty() {
            return Err(CliError::Data("no training images".into()));
        }
        for (name, img) in &data.train {
            let s = img.shape();
            if s.h < train_cfg.patch || s.w < train_cfg.patch {
                return Err(CliError::Data(format!(
                    "{name} is {}x{}, smaller than the {} pixel patch",
                    s.w, s.h, train_cfg.patch
                )));
            }
        }
    }
    let images: Vec<Tensor> = data.train.iter().map(|(_, t)| t.clone()).collect();
    let validation = lr_hr_pairs(&data.val, model_cfg.scale)?;
    let bicubic_psnr = if validation.is_empty() {
        None
    } else {
        Some(super::eval::bicubic_psnr(&validation, model_cfg.scale)?)
    };

    let mut model = SrModel::build(model_cfg, cfg.train.seed)?;
    let train_data = TrainData {
        images: &images,
        validation: &validation,
    };
    let log = train_with(&mut model, &train_data, &train_cfg, |r| {
        info!(
            "epoch {} lr {:.3e} loss {:.6} val_psnr {}",
            r.epoch,
            r.lr,
            r.train_loss,
            r.val_psnr.map_or("-".into(), |p| format!("{p:.3}"))
        );
    })?;
    model.sync();
    let val_psnr = match log.last().and_then(|r| r.val_psnr) {
        Some(p) => Some(p),
        None if !validation.is_empty() => Some(evaluate_psnr(&model, &validation)?),
        None => None,
    };
    Ok(TrainOutcome {
        model,
        log,
        val_psnr,
        bicubic_psnr,
    })
}

/// Trains per the resolved config and writes the model file, the training
/// log, the resolved config and a run manifest into `out_dir`.
pub fn cmd_train(source: &ConfigSource, overrides: &Overrides, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome, CliError> {
    let mut manifest = RunManifest::new("train", out_dir);
    let cfg = source.resolve(overrides)?;
    source.record(&mut manifest);
    manifest.seed = Some(cfg.train.seed);
    manifest.config = Some(cfg.clone());
    manifest.data_dir = Some(data_dir.display().to_string());

    let data = load_dataset(data_dir, cfg.model.scale)?;
    info!("{} training images, {} validation images", data.train.len(), data.val.len());
    ensure_dir(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml())?;
    let outcome = train_model(&cfg, &data)?;
    save_model(&outcome.model, &out_dir.join(MODEL_FILE))?;
    write_log(&out_dir.join(LOG_FILE), &outcome.log)?;
    manifest.finish(vec![MODEL_FILE.into(), LOG_FILE.into(), CONFIG_FILE.into()])?;
    Ok(outcome)
}
