use std::path::Path;

use bsr_core::cost::model_size;
use log::info;
use serde::{Deserialize, Serialize};

use super::train::train_model;
use super::{ensure_dir, load_dataset, ConfigSource, Overrides};
use crate::config::{AlphaName, RunConfig};
use crate::error::CliError;
use crate::report::{write_csv, RunManifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub seed: u64,
    pub alpha_mode: AlphaName,
    pub final_loss: Option<f64>,
    pub val_psnr: Option<f64>,
    pub bicubic_psnr: Option<f64>,
}

pub const ALPHA_FILE: &str = "compare_alpha.csv";
pub const DEPTH_FILE: &str = "depth_sweep.csv";

fn prepare(source: &ConfigSource, overrides: &Overrides, command: &str, data_dir: &Path, out_dir: &Path) -> Result<(RunConfig, RunManifest), CliError> {
    let mut manifest = RunManifest::new(command, out_dir);
    let cfg = source.resolve(overrides)?;
    source.record(&mut manifest);
    manifest.seed = Some(cfg.train.seed);
    manifest.config = Some(cfg.clone());
    manifest.data_dir = Some(data_dir.display().to_string());
    Ok((cfg, manifest))
}

/// Trains the learnable and deterministic twins of the config for each seed
/// (the config's own seed when `seeds` is empty). Twins share the seed and
/// so start from identical shadow weights. Two rows per seed.
pub fn cmd_compare_alpha(source: &ConfigSource, overrides: &Overrides, data_dir: &Path, out_dir: &Path, seeds: &[u64]) -> Result<Vec<AlphaRow>, CliError> {
    let (cfg, manifest) = prepare(source, overrides, "compare-alpha", data_dir, out_dir)?;
    let seeds = if seeds.is_empty() { vec![cfg.train.seed] } else { seeds.to_vec() };
    let data = load_dataset(data_dir, cfg.model.scale)?;
    let mut rows = Vec::with_capacity(2 * seeds.len());
    for &seed in &seeds {
        for mode in [AlphaName::Learnable, AlphaName::Deterministic] {
            let mut run = cfg.clone();
            run.model.alpha_mode = mode;
            run.train.seed = seed;
            let outcome = train_model(&run, &data)?;
            info!("seed {seed} {mode:?}: val_psnr {:?}", outcome.val_psnr);
            rows.push(AlphaRow {
                seed,
                alpha_mode: mode,
                final_loss: outcome.final_loss(),
                val_psnr: outcome.val_psnr,
                bicubic_psnr: outcome.bicubic_psnr,
            });
        }
    }
    ensure_dir(out_dir)?;
    write_csv(&out_dir.join(ALPHA_FILE), &rows)?;
    manifest.finish(vec![ALPHA_FILE.into()])?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub blocks: usize,
    pub binary_params: u64,
    pub real_params: u64,
    pub binary_mb: f64,
    pub real_mb: f64,
    pub final_loss: Option<f64>,
    pub val_psnr: Option<f64>,
}

/// Trains one model per residual-block count and tabulates size and PSNR.
pub fn cmd_depth_sweep(source: &ConfigSource, overrides: &Overrides, data_dir: &Path, out_dir: &Path, depths: &[usize]) -> Result<Vec<DepthRow>, CliError> {
    let (cfg, manifest) = prepare(source, overrides, "depth-sweep", data_dir, out_dir)?;
    if depths.is_empty() {
        return Err(CliError::Config("no depths given".into()));
    }
    let data = load_dataset(data_dir, cfg.model.scale)?;
    let mut rows = Vec::with_capacity(depths.len());
    for &blocks in depths {
        let mut run = cfg.clone();
        run.model.blocks = blocks;
        let outcome = train_model(&run, &data)?;
        let size = model_size(&outcome.model);
        let (binary_params, real_params) = outcome.model.count_parameters();
        info!("depth {blocks}: val_psnr {:?}", outcome.val_psnr);
        rows.push(DepthRow {
            blocks,
            binary_params: binary_params as u64,
            real_params: real_params as u64,
            binary_mb: size.binary_mb(),
            real_mb: size.real_mb(),
            final_loss: outcome.final_loss(),
            val_psnr: outcome.val_psnr,
        });
    }
    ensure_dir(out_dir)?;
    write_csv(&out_dir.join(DEPTH_FILE), &rows)?;
    manifest.finish(vec![DEPTH_FILE.into()])?;
    Ok(rows)
}
