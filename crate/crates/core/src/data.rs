//! Training pairs and image-quality metrics.
//!
//! Images are `(N, 3, H, W)` RGB tensors with values in `[0, 1]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::math::{exp, log10};
use crate::tensor::{Shape, Tensor};

/// Bicubic kernel parameter.
pub const CUBIC_A: f64 = -0.5;
/// Standard deviation of the noise added to HR training patches.
pub const NOISE_STD: f32 = 0.01;
/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeFactor {
    Up2,
    Up4,
    Down2,
    Down4,
}

impl ResizeFactor {
    pub fn down(scale: usize) -> Result<ResizeFactor> {
        match scale {
            2 => Ok(ResizeFactor::Down2),
            4 => Ok(ResizeFactor::Down4),
            s => Err(Error::InvalidArgument(format!("unsupported downscale factor {s}"))),
        }
    }

    pub fn up(scale: usize) -> Result<ResizeFactor> {
        match scale {
            2 => Ok(ResizeFactor::Up2),
            4 => Ok(ResizeFactor::Up4),
            s => Err(Error::InvalidArgument(format!("unsupported upscale factor {s}"))),
        }
    }
}

/// Sparse resampling matrix along one axis: per output index, a start index
/// into the clamped source and its normalized weights.
struct Taps {
    index: Vec<Vec<usize>>,
    weight: Vec<Vec<f32>>,
}

fn taps(src: usize, dst: usize) -> Taps {
    let scale = dst as f64 / src as f64;
    // Shrinking widens the kernel so it also low-passes the input.
    let stretch = if scale < 1.0 { scale } else { 1.0 };
    let support = 2.0 / stretch;
    let mut index = Vec::with_capacity(dst);
    let mut weight = Vec::with_capacity(dst);
    for o in 0..dst {
        let center = (o as f64 + 0.5) / scale - 0.5;
        let lo = crate::math::floor(center - support) as isize;
        let hi = crate::math::floor(center + support) as isize + 1;
        let mut idx = Vec::new();
        let mut w = Vec::new();
        for j in lo..=hi {
            let k = cubic((center - j as f64) * stretch);
            if k == 0.0 {
                continue;
            }
            idx.push(j.clamp(0, src as isize - 1) as usize);
            w.push(k);
        }
        let total: f64 = w.iter().sum();
        weight.push(w.iter().map(|&v| (v / total) as f32).collect());
        index.push(idx);
    }
    Taps { index, weight }
}

/// Separable bicubic resampling of every plane to `out_h x out_w`, clamping
/// at the borders and clipping the result to `[0, 1]`.
pub fn resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.h == 0 || s.w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize {s} to {out_h}x{out_w}")));
    }
    let th = taps(s.h, out_h);
    let tw = taps(s.w, out_w);
    let planes = s.n * s.c;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    let mut rows = vec![0.0f32; s.h * out_w];
    for p in 0..planes {
        let src = &img.data()[p * s.plane()..(p + 1) * s.plane()];
        for y in 0..s.h {
            let line = &src[y * s.w..(y + 1) * s.w];
            for x in 0..out_w {
                rows[y * out_w + x] = tw.index[x].iter().zip(&tw.weight[x]).map(|(&i, &w)| line[i] * w).sum();
            }
        }
        let dst = &mut out.data_mut()[p * out_h * out_w..(p + 1) * out_h * out_w];
        for y in 0..out_h {
            for x in 0..out_w {
                let v: f32 = th.index[y].iter().zip(&th.weight[y]).map(|(&i, &w)| rows[i * out_w + x] * w).sum();
                dst[y * out_w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Bicubic resize by a power-of-two factor. Downscaling requires dimensions
/// divisible by the factor.
pub fn bicubic_resize(img: &Tensor, factor: ResizeFactor) -> Result<Tensor> {
    let s = img.shape();
    let (h, w) = match factor {
        ResizeFactor::Up2 => (s.h * 2, s.w * 2),
        ResizeFactor::Up4 => (s.h * 4, s.w * 4),
        ResizeFactor::Down2 | ResizeFactor::Down4 => {
            let f = if factor == ResizeFactor::Down2 { 2 } else { 4 };
            if s.h % f != 0 || s.w % f != 0 {
                return Err(shape_err("bicubic_resize", format!("{s} is not divisible by {f}")));
            }
            (s.h / f, s.w / f)
        }
    };
    resize(img, h, w)
}

pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, h, w| t.at(n, c, h, s.w - 1 - w))
}

pub fn flip_vertical(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, h, w| t.at(n, c, s.h - 1 - h, w))
}

/// Rotates each plane by `quarter_turns * 90` degrees counter-clockwise.
pub fn rotate90(t: &Tensor, quarter_turns: usize) -> Tensor {
    let mut out = t.clone();
    for _ in 0..quarter_turns % 4 {
        let s = out.shape();
        let src = out;
        out = Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, h, w| src.at(n, c, w, s.w - 1 - h));
    }
    out
}

/// Copies the `size_h x size_w` window at `(top, left)` of batch item 0.
pub fn crop(img: &Tensor, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Tensor> {
    let s = img.shape();
    if top + size_h > s.h || left + size_w > s.w {
        return Err(shape_err("crop", format!("window {size_h}x{size_w} at ({top},{left}) exceeds {s}")));
    }
    Ok(Tensor::from_fn(Shape::new(1, s.c, size_h, size_w), |_, c, h, w| img.at(0, c, top + h, left + w)))
}

/// A training pair: `hr` is `scale` times larger than `lr` on each side.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: Tensor,
    pub hr: Tensor,
}

/// Random crop, flips, rotation and HR-side noise.
pub fn sample_and_augment<R: Rng + ?Sized>(hr: &Tensor, patch: usize, scale: usize, rng: &mut R) -> Result<PatchPair> {
    sample_and_augment_with(hr, patch, scale, NOISE_STD, rng)
}

/// [`sample_and_augment`] with an explicit noise level.
pub fn sample_and_augment_with<R: Rng + ?Sized>(
    hr: &Tensor,
    patch: usize,
    scale: usize,
    noise_std: f32,
    rng: &mut R,
) -> Result<PatchPair> {
    let s = hr.shape();
    if patch == 0 || patch % scale != 0 {
        return Err(Error::InvalidArgument(format!("patch {patch} must be a positive multiple of {scale}")));
    }
    if patch > s.h || patch > s.w {
        return Err(shape_err("sample_and_augment", format!("patch {patch} larger than image {s}")));
    }
    let top = rng.random_range(0..=s.h - patch);
    let left = rng.random_range(0..=s.w - patch);
    let mut clean = crop(hr, top, left, patch, patch)?;
    if rng.random_bool(0.5) {
        clean = flip_horizontal(&clean);
    }
    if rng.random_bool(0.5) {
        clean = flip_vertical(&clean);
    }
    clean = rotate90(&clean, rng.random_range(0..4));
    let lr = bicubic_resize(&clean, ResizeFactor::down(scale)?)?;
    let hr = if noise_std > 0.0 {
        let normal = Normal::new(0.0f32, noise_std).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
        clean.map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
    } else {
        clean
    };
    Ok(PatchPair { lr, hr })
}

/// Full-range BT.601 luma of every pixel, as `(N, 1, H, W)` in f64.
pub fn luma(img: &Tensor) -> Result<Vec<f64>> {
    let s = img.shape();
    if s.c != 3 {
        return Err(shape_err("luma", format!("expected 3 channels, got {s}")));
    }
    let mut y = Vec::with_capacity(s.n * s.plane());
    for n in 0..s.n {
        let item = img.item(n);
        let (r, rest) = item.split_at(s.plane());
        let (g, b) = rest.split_at(s.plane());
        y.extend((0..s.plane()).map(|i| 0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64));
    }
    Ok(y)
}

fn check_pair(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::Empty(op));
    }
    Ok(())
}

/// PSNR of the luma channel for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr_y(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair("psnr_y", a, b)?;
    let ya = luma(a)?;
    let yb = luma(b)?;
    let mse = ya.iter().zip(&yb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ya.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * log10(1.0 / mse)).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Separable "valid" filtering of an `h x w` plane with the SSIM window.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| src[y * w + x + k] * g[k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| rows[(y + k) * ow + x] * g[k]).sum();
        }
    }
    out
}

/// Single-scale SSIM on luma with an 11x11 Gaussian window (sigma 1.5),
/// averaged over valid window positions and batch items.
pub fn ssim_y(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair("ssim_y", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(shape_err("ssim_y", format!("{s} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let c1 = (0.01f64 * 1.0) * (0.01 * 1.0);
    let c2 = (0.03f64 * 1.0) * (0.03 * 1.0);
    let g = gaussian_window();
    let ya = luma(a)?;
    let yb = luma(b)?;
    let plane = s.plane();
    let mut total = 0.0;
    for n in 0..s.n {
        let x = &ya[n * plane..(n + 1) * plane];
        let y = &yb[n * plane..(n + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(x, s.h, s.w, &g);
        let my = filter_valid(y, s.h, s.w, &g);
        let sxx = filter_valid(&xx, s.h, s.w, &g);
        let syy = filter_valid(&yy, s.h, s.w, &g);
        let sxy = filter_valid(&xy, s.h, s.w, &g);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / s.n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub psnr_y: f64,
    pub ssim_y: f64,
}

/// Per-image metrics and their means.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn push(&mut self, name: impl Into<String>, sr: &Tensor, hr: &Tensor) -> Result<()> {
        let row = MetricsRow {
            name: name.into(),
            psnr_y: psnr_y(sr, hr)?,
            ssim_y: ssim_y(sr, hr)?,
        };
        self.rows.push(row);
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr_y))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_y))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}
