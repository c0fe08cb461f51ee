//! PNG images as `(1, 3, H, W)` tensors in `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use bsr_core::{Shape, Tensor};
use image::{ImageBuffer, Rgb};

use crate::error::CliError;

/// Decodes any PNG to RGB and scales 8-bit samples by `1/255`.
pub fn load_png(path: &Path) -> Result<Tensor, CliError> {
    let img = image::open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0))
}

/// Writes batch item 0 as an 8-bit RGB PNG, rounding and clipping.
pub fn save_png(path: &Path, img: &Tensor) -> Result<(), CliError> {
    let s = img.shape();
    if s.c != 3 || s.n == 0 {
        return Err(CliError::Data(format!("cannot write {s} as RGB")));
    }
    let buf = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c| (img.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    buf.save(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Every `*.png` directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every PNG in `dir` with its file stem.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, Tensor)>, CliError> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(CliError::Data(format!("no PNG images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_png(p)?))
        })
        .collect()
}
