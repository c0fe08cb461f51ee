use std::path::Path;

use bsr_core::data::{bicubic_resize, psnr_y, MetricsReport, ResizeFactor};
use bsr_core::{SrModel, Tensor};
use serde::{Deserialize, Serialize};

use super::{ensure_dir, load_eval_images, lr_hr_pairs};
use crate::error::CliError;
use crate::format::load_model;
use crate::io::{load_png, save_png};
use crate::report::{write_csv, RunManifest};

/// Anything that maps an LR image to an image `scale` times larger.
pub trait Upsampler {
    fn scale(&self) -> usize;
    fn upsample(&self, lr: &Tensor) -> Result<Tensor, CliError>;
}

impl Upsampler for SrModel {
    fn scale(&self) -> usize {
        self.config().scale
    }

    fn upsample(&self, lr: &Tensor) -> Result<Tensor, CliError> {
        Ok(self.forward(lr)?.clamp(0.0, 1.0))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BicubicUpsampler {
    pub scale: usize,
}

impl Upsampler for BicubicUpsampler {
    fn scale(&self) -> usize {
        self.scale
    }

    fn upsample(&self, lr: &Tensor) -> Result<Tensor, CliError> {
        Ok(bicubic_resize(lr, ResizeFactor::up(self.scale)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image: String,
    pub psnr_y: f64,
    pub ssim_y: f64,
    pub bicubic_psnr_y: f64,
    pub bicubic_ssim_y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean: EvalRow,
}

pub const EVAL_FILE: &str = "eval.csv";

/// Scores `up` and the bicubic baseline on every HR image.
pub fn evaluate(up: &dyn Upsampler, images: &[(String, Tensor)]) -> Result<EvalReport, CliError> {
    if images.is_empty() {
        return Err(CliError::Data("no evaluation images".into()));
    }
    let scale = up.scale();
    let bicubic = BicubicUpsampler { scale };
    let (mut model, mut base) = (MetricsReport::default(), MetricsReport::default());
    for ((name, hr), (lr, _)) in images.iter().zip(lr_hr_pairs(images, scale)?) {
        model.push(name.as_str(), &up.upsample(&lr)?, hr)?;
        base.push(name.as_str(), &bicubic.upsample(&lr)?, hr)?;
    }
    let rows = model
        .rows
        .iter()
        .zip(&base.rows)
        .map(|(m, b)| EvalRow {
            image: m.name.clone(),
            psnr_y: m.psnr_y,
            ssim_y: m.ssim_y,
            bicubic_psnr_y: b.psnr_y,
            bicubic_ssim_y: b.ssim_y,
        })
        .collect();
    let mean = EvalRow {
        image: "mean".into(),
        psnr_y: model.mean_psnr(),
        ssim_y: model.mean_ssim(),
        bicubic_psnr_y: base.mean_psnr(),
        bicubic_ssim_y: base.mean_ssim(),
    };
    Ok(EvalReport { rows, mean })
}

pub(super) fn bicubic_psnr(pairs: &[(Tensor, Tensor)], scale: usize) -> Result<f64, CliError> {
    let up = BicubicUpsampler { scale };
    let mut total = 0.0;
    for (lr, hr) in pairs {
        total += psnr_y(&up.upsample(lr)?, hr)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Evaluates a saved model; with `out_dir`, also writes `eval.csv` (per-image
/// rows followed by the mean row) and a manifest.
pub fn cmd_eval(model_path: &Path, data_dir: &Path, out_dir: Option<&Path>) -> Result<EvalReport, CliError> {
    let model = load_model(model_path)?;
    let images = load_eval_images(data_dir, model.config().scale)?;
    let report = evaluate(&model, &images)?;
    if let Some(out) = out_dir {
        let mut manifest = RunManifest::new("eval", out);
        manifest.model_path = Some(model_path.display().to_string());
        manifest.data_dir = Some(data_dir.display().to_string());
        ensure_dir(out)?;
        let mut rows = report.rows.clone();
        rows.push(report.mean.clone());
        write_csv(&out.join(EVAL_FILE), &rows)?;
        manifest.finish(vec![EVAL_FILE.into()])?;
    }
    Ok(report)
}

/// Upscales one PNG with a saved model.
pub fn cmd_upscale(model_path: &Path, input: &Path, output: &Path) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let lr = load_png(input)?;
    save_png(output, &model.upsample(&lr)?)
}
