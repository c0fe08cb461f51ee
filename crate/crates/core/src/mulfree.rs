//! Binary-weight convolution evaluated with additions only.
//!
//! For filter `f` with sign bits `B_f` the output at every location is
//! `alpha_f * (S+ - S-)`, where `S+`/`S-` sum the input window at `+1`/`-1`
//! taps. Using `S+ - S- = 2 S+ - S_total` the window total is shared by all
//! filters, `2 S+` is formed as `S+ + S+`, and the only multiplication per
//! output value is the final scale by `alpha_f`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Sub};

use crate::binary::BinaryConvLayer;
use crate::error::{shape_err, Error, Result};
use crate::ops::conv::conv_patches;
use crate::tensor::{Shape, Tensor};

/// Scalar type the kernel accumulates in. Implemented for `f32`; tests plug in
/// an instrumented type to count multiplications.
pub trait Accumulator: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn zero() -> Self;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Accumulator for f32 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

/// Multiplication-free evaluation of `layer` on `input (N,C,H,W)`.
pub fn binconv_mulfree(input: &Tensor, layer: &BinaryConvLayer) -> Result<Tensor> {
    binconv_mulfree_with::<f32>(input, layer)
}

/// [`binconv_mulfree`] accumulating in `T`.
pub fn binconv_mulfree_with<T: Accumulator>(input: &Tensor, layer: &BinaryConvLayer) -> Result<Tensor> {
    if !layer.is_synced() {
        return Err(Error::Unsynced(String::from("binconv_mulfree")));
    }
    let spec = layer.spec();
    let s = input.shape();
    if s.c != spec.in_channels {
        return Err(shape_err(
            "binconv_mulfree",
            alloc::format!("input {s} has {} channels, layer expects {}", s.c, spec.in_channels),
        ));
    }
    let p = conv_patches(s, spec)?;
    let (rows, cols) = (p.rows(), p.cols());
    let packed = layer.packed();
    let alpha: Vec<T> = layer.alpha().iter().map(|&a| T::from_f32(a)).collect();
    let bias = layer.bias();

    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, p.out_h, p.out_w));
    let mut patch_buf = if p.is_identity() { Vec::new() } else { vec![0.0f32; rows * cols] };
    let mut total = vec![T::zero(); cols];
    let mut pos = vec![T::zero(); cols];
    for n in 0..s.n {
        let patches: &[f32] = if p.is_identity() {
            input.item(n)
        } else {
            p.im2col(input.item(n), &mut patch_buf);
            &patch_buf
        };
        total.fill(T::zero());
        for row in patches.chunks_exact(cols) {
            for (t, &v) in total.iter_mut().zip(row) {
                *t = *t + T::from_f32(v);
            }
        }
        let dst = out.item_mut(n);
        for (f, plane) in dst.chunks_exact_mut(cols).enumerate() {
            pos.fill(T::zero());
            let bits = packed.row(f);
            for (i, row) in patches.chunks_exact(cols).enumerate() {
                if bits[i / 8] & (0x80 >> (i % 8)) == 0 {
                    continue;
                }
                for (acc, &v) in pos.iter_mut().zip(row) {
                    *acc = *acc + T::from_f32(v);
                }
            }
            let b = bias.map_or(T::zero(), |b| T::from_f32(b[f]));
            for ((o, &sp), &st) in plane.iter_mut().zip(&pos).zip(&total) {
                *o = (alpha[f] * (sp + sp - st) + b).to_f32();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::AlphaMode;
    use crate::ops::{conv2d, ConvSpec};

    #[test]
    fn two_channel_hand_example() {
        let w = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.7, -0.7]).unwrap();
        let mut layer = BinaryConvLayer::new(ConvSpec::same(2, 1, 1), w, None, AlphaMode::Learnable).unwrap();
        layer.alpha_mut()[0] = 2.0;
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![3.0, 5.0]).unwrap();
        let y = binconv_mulfree(&x, &layer).unwrap();
        assert_eq!(y.data(), &[-4.0]);
        let dense = conv2d(&x, &layer.effective_weights(), None, layer.spec()).unwrap();
        assert_eq!(dense.data(), y.data());
    }

    #[test]
    fn all_positive_bits_give_window_sum() {
        let w = Tensor::filled(Shape::new(1, 1, 3, 3), 0.4);
        let mut layer = BinaryConvLayer::new(ConvSpec::same(1, 1, 3), w, None, AlphaMode::Learnable).unwrap();
        layer.alpha_mut()[0] = 1.0;
        let x = Tensor::filled(Shape::new(1, 1, 3, 3), 1.0);
        let y = binconv_mulfree(&x, &layer).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn stale_layer_rejected() {
        let w = Tensor::filled(Shape::new(1, 1, 1, 1), 1.0);
        let mut layer = BinaryConvLayer::new(ConvSpec::same(1, 1, 1), w, None, AlphaMode::Deterministic).unwrap();
        layer.shadow_mut().data_mut()[0] = -1.0;
        let x = Tensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        assert!(matches!(binconv_mulfree(&x, &layer), Err(Error::Unsynced(_))));
    }
}
