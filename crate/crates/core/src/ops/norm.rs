//! Batch normalization over (N, H, W) per channel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math::sqrt;
use crate::tensor::Tensor;

pub const BN_EPSILON: f32 = 1e-5;
/// Weight kept on the previous running value at each training step.
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

/// Saved intermediates of a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f32>,
}

fn check(input: &Tensor, gamma: Option<&[f32]>, beta: &[f32], stats: &RunningStats) -> Result<()> {
    let s = input.shape();
    if s.n == 0 || s.plane() == 0 {
        return Err(Error::Empty("batch_norm"));
    }
    let c = s.c;
    let ok = beta.len() == c
        && gamma.is_none_or(|g| g.len() == c)
        && stats.mean.len() == c
        && stats.var.len() == c;
    if !ok {
        return Err(shape_err("batch_norm", format!("parameter lengths do not match {c} channels")));
    }
    Ok(())
}

fn affine(input: &Tensor, shift: &[f32], scale: &[f32], gamma: Option<&[f32]>, beta: &[f32]) -> Tensor {
    let s = input.shape();
    let mut out = input.clone();
    for n in 0..s.n {
        for (c, plane) in out.item_mut(n).chunks_mut(s.plane()).enumerate() {
            let g = gamma.map_or(1.0, |g| g[c]);
            for v in plane {
                *v = (*v - shift[c]) * scale[c] * g + beta[c];
            }
        }
    }
    out
}

/// Normalizes `input`. Train mode uses batch statistics and folds them into
/// `stats` by exponential moving average; infer mode uses `stats` as-is.
/// A `None` gamma means unit scale.
pub fn batch_norm(
    input: &Tensor,
    gamma: Option<&[f32]>,
    beta: &[f32],
    stats: &mut RunningStats,
    mode: NormMode,
    epsilon: f32,
) -> Result<Tensor> {
    match mode {
        NormMode::Train => Ok(batch_norm_train(input, gamma, beta, stats, epsilon, BN_MOMENTUM)?.0),
        NormMode::Infer => batch_norm_infer(input, gamma, beta, stats, epsilon),
    }
}

/// Inference-mode normalization with fixed running statistics.
pub fn batch_norm_infer(
    input: &Tensor,
    gamma: Option<&[f32]>,
    beta: &[f32],
    stats: &RunningStats,
    epsilon: f32,
) -> Result<Tensor> {
    check(input, gamma, beta, stats)?;
    let inv: Vec<f32> = stats.var.iter().map(|&v| 1.0 / crate::math::sqrtf(v + epsilon)).collect();
    Ok(affine(input, &stats.mean, &inv, gamma, beta))
}

pub fn batch_norm_train(
    input: &Tensor,
    gamma: Option<&[f32]>,
    beta: &[f32],
    stats: &mut RunningStats,
    epsilon: f32,
    momentum: f32,
) -> Result<(Tensor, BatchNormCache)> {
    check(input, gamma, beta, stats)?;
    let s = input.shape();
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0f64; s.c];
    let mut var = vec![0.0f64; s.c];
    for n in 0..s.n {
        for (c, plane) in input.item(n).chunks(s.plane()).enumerate() {
            mean[c] += plane.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for n in 0..s.n {
        for (c, plane) in input.item(n).chunks(s.plane()).enumerate() {
            var[c] += plane
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean[c];
                    d * d
                })
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let mean32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
    let inv_std: Vec<f32> = var.iter().map(|&v| (1.0 / sqrt(v + epsilon as f64)) as f32).collect();
    let normalized = affine(input, &mean32, &inv_std, None, &vec![0.0; s.c]);
    let out = match gamma {
        None => affine(&normalized, &vec![0.0; s.c], &vec![1.0; s.c], None, beta),
        Some(g) => affine(&normalized, &vec![0.0; s.c], &vec![1.0; s.c], Some(g), beta),
    };
    for c in 0..s.c {
        stats.mean[c] = momentum * stats.mean[c] + (1.0 - momentum) * mean32[c];
        stats.var[c] = momentum * stats.var[c] + (1.0 - momentum) * var[c] as f32;
    }
    Ok((out, BatchNormCache { normalized, inv_std }))
}

/// Backward of the training-mode normalization: `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward(
    grad_out: &Tensor,
    gamma: Option<&[f32]>,
    cache: &BatchNormCache,
) -> Result<(Tensor, Option<Vec<f32>>, Vec<f32>)> {
    let s = grad_out.shape();
    if cache.normalized.shape() != s {
        return Err(shape_err(
            "batch_norm_backward",
            format!("{} vs cached {}", s, cache.normalized.shape()),
        ));
    }
    let count = (s.n * s.plane()) as f64;
    let mut sum_dy = vec![0.0f64; s.c];
    let mut sum_dy_xhat = vec![0.0f64; s.c];
    for n in 0..s.n {
        let dy = grad_out.item(n);
        let xh = cache.normalized.item(n);
        for c in 0..s.c {
            let r = c * s.plane()..(c + 1) * s.plane();
            for (&g, &x) in dy[r.clone()].iter().zip(&xh[r]) {
                sum_dy[c] += g as f64;
                sum_dy_xhat[c] += g as f64 * x as f64;
            }
        }
    }
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        let dy = grad_out.item(n);
        let xh = cache.normalized.item(n);
        let out = dx.item_mut(n);
        for c in 0..s.c {
            let g = gamma.map_or(1.0, |g| g[c]) as f64;
            let k = g * cache.inv_std[c] as f64 / count;
            let (a, b) = (sum_dy[c], sum_dy_xhat[c]);
            for i in c * s.plane()..(c + 1) * s.plane() {
                out[i] = (k * (count * dy[i] as f64 - a - xh[i] as f64 * b)) as f32;
            }
        }
    }
    let dgamma = gamma.map(|_| sum_dy_xhat.iter().map(|&v| v as f32).collect());
    let dbeta = sum_dy.iter().map(|&v| v as f32).collect();
    Ok((dx, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn standardized() -> Tensor {
        // each channel: values {-1, 1} repeated, mean 0, variance 1
        Tensor::from_fn(Shape::new(2, 2, 2, 2), |n, _, h, w| if (n + h + w) % 2 == 0 { 1.0 } else { -1.0 })
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let x = standardized();
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, Some(&[1.0, 1.0]), &[0.0, 0.0], &mut stats, NormMode::Train, BN_EPSILON).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-5);
    }

    #[test]
    fn beta_sets_channel_mean_in_train_mode() {
        let x = Tensor::from_fn(Shape::new(3, 2, 3, 3), |n, c, h, w| (n * 7 + c * 3 + h * w) as f32 * 0.3 - 1.0);
        let beta = [0.7, -1.25];
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, None, &beta, &mut stats, NormMode::Train, BN_EPSILON).unwrap();
        for (c, &b) in beta.iter().enumerate() {
            let mut sum = 0.0f64;
            for n in 0..3 {
                for h in 0..3 {
                    for w in 0..3 {
                        sum += y.at(n, c, h, w) as f64;
                    }
                }
            }
            assert!((sum / 27.0 - b as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = Tensor::filled(Shape::new(1, 1, 2, 2), 2.0);
        let mut stats = RunningStats::new(1);
        batch_norm(&x, None, &[0.0], &mut stats, NormMode::Train, BN_EPSILON).unwrap();
        assert!((stats.mean[0] - 0.2).abs() < 1e-6);
        assert!((stats.var[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn infer_mode_is_affine_and_deterministic() {
        let mut stats = RunningStats { mean: vec![0.5], var: vec![4.0] };
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, 2.5, -1.5]).unwrap();
        let a = batch_norm(&x, Some(&[2.0]), &[1.0], &mut stats, NormMode::Infer, 0.0).unwrap();
        let b = batch_norm(&x, Some(&[2.0]), &[1.0], &mut stats, NormMode::Infer, 0.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data(), &[1.0, 3.0, -1.0]);
    }

    #[test]
    fn empty_batch_rejected() {
        let x = Tensor::zeros(Shape::new(0, 1, 2, 2));
        let mut stats = RunningStats::new(1);
        assert!(matches!(
            batch_norm(&x, None, &[0.0], &mut stats, NormMode::Train, BN_EPSILON),
            Err(Error::Empty(_))
        ));
    }
}
