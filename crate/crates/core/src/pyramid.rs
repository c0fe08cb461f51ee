//! Laplacian pyramids and the value statistics of their band-pass layers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math::round;
use crate::tensor::{Shape, Tensor};

const BINOMIAL: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Correlates every row (or column) of each plane with a 5-tap kernel,
/// clamping coordinates at the border.
fn filter_axis(src: &Tensor, taps: &[f32; 5], horizontal: bool) -> Tensor {
    let s = src.shape();
    let mut out = Tensor::zeros(s);
    let (h, w) = (s.h as isize, s.w as isize);
    for p in 0..s.n * s.c {
        let plane = &src.data()[p * s.plane()..(p + 1) * s.plane()];
        let dst = &mut out.data_mut()[p * s.plane()..(p + 1) * s.plane()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (k, &t) in taps.iter().enumerate() {
                    let d = k as isize - 2;
                    let (yy, xx) = if horizontal {
                        (y, (x + d).clamp(0, w - 1))
                    } else {
                        ((y + d).clamp(0, h - 1), x)
                    };
                    acc += t * plane[(yy * w + xx) as usize];
                }
                dst[(y * w + x) as usize] = acc;
            }
        }
    }
    out
}

/// Separable 5-tap binomial blur.
pub fn blur(img: &Tensor) -> Tensor {
    filter_axis(&filter_axis(img, &BINOMIAL, true), &BINOMIAL, false)
}

/// Blur then keep even rows and columns.
pub fn reduce(img: &Tensor) -> Tensor {
    let b = blur(img);
    let s = img.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h.div_ceil(2), s.w.div_ceil(2)), |n, c, h, w| b.at(n, c, 2 * h, 2 * w))
}

/// Zero-insertion upsampling to `h x w` followed by the binomial blur with
/// doubled gain, so constants are preserved.
pub fn expand(img: &Tensor, h: usize, w: usize) -> Tensor {
    let s = img.shape();
    let mut up = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h.min(h.div_ceil(2)) {
                for x in 0..s.w.min(w.div_ceil(2)) {
                    up.set(n, c, 2 * y, 2 * x, img.at(n, c, y, x));
                }
            }
        }
    }
    let taps = BINOMIAL.map(|t| 2.0 * t);
    // Per-pixel gain of the stuffed grid, divided out so borders keep unit gain.
    let ones = {
        let mut m = Tensor::zeros(Shape::new(1, 1, h, w));
        for y in (0..h).step_by(2) {
            for x in (0..w).step_by(2) {
                m.set(0, 0, y, x, 1.0);
            }
        }
        filter_axis(&filter_axis(&m, &taps, true), &taps, false)
    };
    let mut out = filter_axis(&filter_axis(&up, &taps, true), &taps, false);
    let plane = h * w;
    for chunk in out.data_mut().chunks_mut(plane) {
        for (v, &g) in chunk.iter_mut().zip(ones.data()) {
            *v /= g;
        }
    }
    out
}

/// Band-pass layers (finest first) plus the low-pass residual.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid {
    pub gradients: Vec<Tensor>,
    pub base: Tensor,
}

/// Pads the bottom and right edges by replication up to multiples of `m`.
pub fn pad_to_multiple(img: &Tensor, m: usize) -> Tensor {
    let s = img.shape();
    let (h, w) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| img.at(n, c, y.min(s.h - 1), x.min(s.w - 1)))
}

/// `levels` gradient layers: `level_i - expand(reduce(level_i))`.
pub fn build_laplacian(img: &Tensor, levels: usize) -> Result<LaplacianPyramid> {
    let s = img.shape();
    if levels == 0 {
        return Err(Error::InvalidArgument("a pyramid needs at least one level".into()));
    }
    let f = 1usize << levels;
    if s.h < f || s.w < f {
        return Err(shape_err("build_laplacian", format!("{levels} levels do not fit {s}")));
    }
    if s.h % f != 0 || s.w % f != 0 {
        return Err(shape_err("build_laplacian", format!("{s} is not divisible by {f}; pad it first")));
    }
    let mut gradients = Vec::with_capacity(levels);
    let mut cur = img.clone();
    for _ in 0..levels {
        let next = reduce(&cur);
        let s = cur.shape();
        let up = expand(&next, s.h, s.w);
        gradients.push(cur.sub(&up)?);
        cur = next;
    }
    Ok(LaplacianPyramid { gradients, base: cur })
}

/// Inverse of [`build_laplacian`].
pub fn collapse(pyr: &LaplacianPyramid) -> Result<Tensor> {
    let mut cur = pyr.base.clone();
    for g in pyr.gradients.iter().rev() {
        let s = g.shape();
        cur = expand(&cur, s.h, s.w).add(g)?;
    }
    Ok(cur)
}

/// Normalized histogram over `[-1, 1]` with an odd number of bins centred on
/// multiples of `2 / bins`; out-of-range values land in the end bins.
pub fn gradient_histogram(layer: &Tensor, bins: usize) -> Result<Vec<f64>> {
    let mut counts = histogram_counts(layer.data(), bins)?;
    let total = layer.len() as f64;
    Ok(counts.drain(..).map(|c| c as f64 / total).collect())
}

fn histogram_counts(values: &[f32], bins: usize) -> Result<Vec<u64>> {
    if bins < 3 || bins % 2 == 0 {
        return Err(Error::InvalidArgument(format!("bin count must be odd and at least 3, got {bins}")));
    }
    if values.is_empty() {
        return Err(Error::Empty("gradient_histogram"));
    }
    let width = 2.0 / bins as f64;
    let half = (bins / 2) as i64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let k = (round(v as f64 / width) as i64).clamp(-half, half);
        counts[(k + half) as usize] += 1;
    }
    Ok(counts)
}

/// Gradient-layer statistics of a corpus, one entry per level.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidStats {
    pub levels: usize,
    pub bins: usize,
    pub histograms: Vec<Vec<f64>>,
    pub mean_abs: Vec<f64>,
    sorted_abs: Vec<Vec<f32>>,
}

impl PyramidStats {
    /// Pools the gradient layers of every pyramid level by level.
    pub fn from_pyramids(pyramids: &[LaplacianPyramid], bins: usize) -> Result<PyramidStats> {
        let levels = pyramids.first().ok_or(Error::Empty("PyramidStats"))?.gradients.len();
        if pyramids.iter().any(|p| p.gradients.len() != levels) {
            return Err(Error::InvalidArgument("pyramids disagree on level count".into()));
        }
        let mut histograms = Vec::with_capacity(levels);
        let mut mean_abs = Vec::with_capacity(levels);
        let mut sorted_abs = Vec::with_capacity(levels);
        for l in 0..levels {
            let values: Vec<f32> = pyramids.iter().flat_map(|p| p.gradients[l].data().iter().copied()).collect();
            let counts = histogram_counts(&values, bins)?;
            histograms.push(counts.iter().map(|&c| c as f64 / values.len() as f64).collect());
            let mut abs: Vec<f32> = values.iter().map(|v| v.abs()).collect();
            abs.sort_unstable_by(f32::total_cmp);
            mean_abs.push(abs.iter().map(|&v| v as f64).sum::<f64>() / abs.len() as f64);
            sorted_abs.push(abs);
        }
        Ok(PyramidStats {
            levels,
            bins,
            histograms,
            mean_abs,
            sorted_abs,
        })
    }

    pub fn from_images(images: &[Tensor], levels: usize, bins: usize) -> Result<PyramidStats> {
        let pyramids = images
            .iter()
            .map(|img| build_laplacian(&pad_to_multiple(img, 1 << levels), levels))
            .collect::<Result<Vec<_>>>()?;
        PyramidStats::from_pyramids(&pyramids, bins)
    }

    /// Fraction of level-`l` values with `|v| <= tau`.
    pub fn fraction_near_zero(&self, level: usize, tau: f64) -> f64 {
        let abs = &self.sorted_abs[level];
        abs.partition_point(|&v| v as f64 <= tau) as f64 / abs.len() as f64
    }

    pub fn center_bin(&self) -> usize {
        self.bins / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSparsity {
    pub level: usize,
    pub fraction_near_zero: f64,
    pub mean_abs: f64,
}

pub fn sparsity_summary(stats: &PyramidStats, tau: f64) -> Result<Vec<LevelSparsity>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok((0..stats.levels)
        .map(|l| LevelSparsity {
            level: l,
            fraction_near_zero: stats.fraction_near_zero(l, tau),
            mean_abs: stats.mean_abs[l],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_empty_bands() {
        let img = Tensor::filled(Shape::new(1, 3, 16, 16), 0.6);
        let p = build_laplacian(&img, 3).unwrap();
        for g in &p.gradients {
            assert!(g.max_abs() < 1e-6);
        }
        let h = gradient_histogram(&p.gradients[0], 21).unwrap();
        assert!((h[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collapse_reconstructs() {
        let img = Tensor::from_fn(Shape::new(1, 1, 16, 24), |_, _, h, w| ((h * 7 + w * 13) % 17) as f32 / 16.0);
        let p = build_laplacian(&img, 3).unwrap();
        assert!(collapse(&p).unwrap().max_abs_diff(&img).unwrap() <= 1e-6);
    }

    #[test]
    fn histogram_symmetry_and_mass() {
        let t = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, h, w| (h as f32 - w as f32) / 9.0);
        let h = gradient_histogram(&t, 11).unwrap();
        let mut m = gradient_histogram(&t.scale(-1.0), 11).unwrap();
        m.reverse();
        assert_eq!(h, m);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(gradient_histogram(&t, 10).is_err());
    }
}
