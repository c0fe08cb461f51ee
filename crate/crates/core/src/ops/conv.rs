//! Zero-padded 2-D cross-correlation and its transpose, lowered to GEMM via
//! im2col.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::gemm;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of a square-kernel convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// Stride 1 with `kernel / 2` padding, which keeps odd kernels size-preserving.
    pub const fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec::new(in_channels, out_channels, kernel, 1, kernel / 2)
    }

    /// Weights per output filter, `C*k*k`.
    pub const fn filter_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub const fn weight_len(&self) -> usize {
        self.out_channels * self.filter_len()
    }

    /// `(F, C, k, k)` layout used by [`conv2d`].
    pub const fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    /// `(C_in, C_out, k, k)` layout used by [`transposed_conv2d`].
    pub const fn transposed_weight_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.out_channels, self.kernel, self.kernel)
    }

    fn check(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel and stride must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.check()?;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel || pw < self.kernel {
            return Err(shape_err(
                "conv2d",
                format!("{h}x{w} input with padding {} is smaller than kernel {}", self.padding, self.kernel),
            ));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    pub fn transposed_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.check()?;
        if h == 0 || w == 0 {
            return Err(shape_err("transposed_conv2d", format!("empty {h}x{w} input")));
        }
        let oh = (h - 1) * self.stride + self.kernel;
        let ow = (w - 1) * self.stride + self.kernel;
        if oh <= 2 * self.padding || ow <= 2 * self.padding {
            return Err(shape_err(
                "transposed_conv2d",
                format!("padding {} consumes the whole {oh}x{ow} output", self.padding),
            ));
        }
        Ok((oh - 2 * self.padding, ow - 2 * self.padding))
    }
}

/// im2col geometry: a `channels x h x w` image seen through `kernel x kernel`
/// windows, producing an `out_h x out_w` grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Patches {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Patches {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// No copy is needed when every window is a single aligned pixel.
    pub fn is_identity(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Source coordinate of kernel tap `t` for output index `o`, if inside the image.
    #[inline]
    fn source(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Writes the `rows x cols` patch matrix of `image` into `cols`.
    pub fn im2col(&self, image: &[f32], cols: &mut [f32]) {
        let ncols = self.cols();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.out_h {
                        let line = &mut dst[oh * self.out_w..(oh + 1) * self.out_w];
                        match self.source(oh, ki, self.h) {
                            None => line.fill(0.0),
                            Some(ih) => {
                                let src = &plane[ih * self.w..(ih + 1) * self.w];
                                for (ow, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ow, kj, self.w) {
                                        Some(iw) => src[iw],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch matrix back onto `image` (the adjoint of `im2col`).
    pub fn col2im(&self, cols: &[f32], image: &mut [f32]) {
        let ncols = self.cols();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oh in 0..self.out_h {
                        let Some(ih) = self.source(oh, ki, self.h) else {
                            continue;
                        };
                        let dst = &mut plane[ih * self.w..(ih + 1) * self.w];
                        let line = &src[oh * self.out_w..(oh + 1) * self.out_w];
                        for (ow, &v) in line.iter().enumerate() {
                            if let Some(iw) = self.source(ow, kj, self.w) {
                                dst[iw] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias(op: &'static str, bias: Option<&[f32]>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(shape_err(
            op,
            format!("bias has {} entries, expected {channels}", b.len()),
        )),
        _ => Ok(()),
    }
}

fn add_bias(out: &mut [f32], bias: Option<&[f32]>, plane: usize) {
    if let Some(bias) = bias {
        for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
}

fn sum_planes(grad: &Tensor, into: &mut [f32]) {
    let s = grad.shape();
    for n in 0..s.n {
        for (f, chunk) in grad.item(n).chunks(s.plane()).enumerate() {
            into[f] += chunk.iter().sum::<f32>();
        }
    }
}

pub(crate) fn conv_patches(input: Shape, spec: &ConvSpec) -> Result<Patches> {
    let (out_h, out_w) = spec.output_hw(input.h, input.w)?;
    Ok(Patches {
        channels: spec.in_channels,
        h: input.h,
        w: input.w,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h,
        out_w,
    })
}

fn check_conv(op: &'static str, input: Shape, weights: Shape, spec: &ConvSpec, wshape: Shape) -> Result<()> {
    if input.c != spec.in_channels {
        return Err(shape_err(
            op,
            format!("input {input} has {} channels, spec expects {}", input.c, spec.in_channels),
        ));
    }
    if weights != wshape {
        return Err(shape_err(op, format!("weights {weights}, expected {wshape}")));
    }
    Ok(())
}

/// Cross-correlation of `input (N,C,H,W)` with `weights (F,C,k,k)`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: Option<&[f32]>, spec: &ConvSpec) -> Result<Tensor> {
    let s = input.shape();
    check_conv("conv2d", s, weights.shape(), spec, spec.weight_shape())?;
    check_bias("conv2d", bias, spec.out_channels)?;
    let p = conv_patches(s, spec)?;
    let f = spec.out_channels;
    let mut out = Tensor::zeros(Shape::new(s.n, f, p.out_h, p.out_w));
    let mut cols = if p.is_identity() { Vec::new() } else { vec![0.0; p.rows() * p.cols()] };
    for n in 0..s.n {
        let patches: &[f32] = if p.is_identity() {
            input.item(n)
        } else {
            p.im2col(input.item(n), &mut cols);
            &cols
        };
        let dst = out.item_mut(n);
        gemm(f, p.rows(), p.cols(), weights.data(), false, patches, false, dst, false);
        add_bias(dst, bias, p.cols());
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

/// Backward pass of [`conv2d`] for upstream gradient `grad_out`.
pub fn conv2d_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    conv2d_backward_with(input, weights, grad_out, spec, true)
}

pub(crate) fn conv2d_backward_with(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
    want_input: bool,
) -> Result<ConvGrads> {
    let s = input.shape();
    check_conv("conv2d_backward", s, weights.shape(), spec, spec.weight_shape())?;
    let p = conv_patches(s, spec)?;
    let f = spec.out_channels;
    let expected = Shape::new(s.n, f, p.out_h, p.out_w);
    if grad_out.shape() != expected {
        return Err(shape_err(
            "conv2d_backward",
            format!("upstream gradient {}, expected {expected}", grad_out.shape()),
        ));
    }
    let mut gw = Tensor::zeros(spec.weight_shape());
    let mut gb = vec![0.0; f];
    let mut gx = want_input.then(|| Tensor::zeros(s));
    let mut cols = vec![0.0; p.rows() * p.cols()];
    for n in 0..s.n {
        let dy = grad_out.item(n);
        let patches: &[f32] = if p.is_identity() {
            input.item(n)
        } else {
            p.im2col(input.item(n), &mut cols);
            &cols
        };
        gemm(f, p.cols(), p.rows(), dy, false, patches, true, gw.data_mut(), true);
        if let Some(gx) = gx.as_mut() {
            if p.is_identity() {
                gemm(p.rows(), f, p.cols(), weights.data(), true, dy, false, gx.item_mut(n), false);
            } else {
                gemm(p.rows(), f, p.cols(), weights.data(), true, dy, false, &mut cols, false);
                p.col2im(&cols, gx.item_mut(n));
            }
        }
    }
    sum_planes(grad_out, &mut gb);
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

fn transposed_patches(input: Shape, spec: &ConvSpec) -> Result<Patches> {
    let (oh, ow) = spec.transposed_output_hw(input.h, input.w)?;
    // The transpose scatters each input pixel through the kernel, which is the
    // col2im of a forward convolution running over the *output* grid.
    Ok(Patches {
        channels: spec.out_channels,
        h: oh,
        w: ow,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: input.h,
        out_w: input.w,
    })
}

/// Fractionally strided convolution of `input (N,C_in,H,W)` with
/// `weights (C_in,C_out,k,k)`; output is `(H-1)s - 2p + k` on each side.
pub fn transposed_conv2d(input: &Tensor, weights: &Tensor, bias: Option<&[f32]>, spec: &ConvSpec) -> Result<Tensor> {
    let s = input.shape();
    check_conv("transposed_conv2d", s, weights.shape(), spec, spec.transposed_weight_shape())?;
    check_bias("transposed_conv2d", bias, spec.out_channels)?;
    let p = transposed_patches(s, spec)?;
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, p.h, p.w));
    let mut cols = vec![0.0; p.rows() * p.cols()];
    for n in 0..s.n {
        gemm(p.rows(), s.c, p.cols(), weights.data(), true, input.item(n), false, &mut cols, false);
        let dst = out.item_mut(n);
        p.col2im(&cols, dst);
        add_bias(dst, bias, p.h * p.w);
    }
    Ok(out)
}

/// Backward pass of [`transposed_conv2d`].
pub fn transposed_conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    spec: &ConvSpec,
) -> Result<ConvGrads> {
    let s = input.shape();
    check_conv("transposed_conv2d_backward", s, weights.shape(), spec, spec.transposed_weight_shape())?;
    let p = transposed_patches(s, spec)?;
    let expected = Shape::new(s.n, spec.out_channels, p.h, p.w);
    if grad_out.shape() != expected {
        return Err(shape_err(
            "transposed_conv2d_backward",
            format!("upstream gradient {}, expected {expected}", grad_out.shape()),
        ));
    }
    let mut gw = Tensor::zeros(spec.transposed_weight_shape());
    let mut gx = Tensor::zeros(s);
    let mut gb = vec![0.0; spec.out_channels];
    let mut cols = vec![0.0; p.rows() * p.cols()];
    for n in 0..s.n {
        p.im2col(grad_out.item(n), &mut cols);
        gemm(s.c, p.rows(), p.cols(), weights.data(), false, &cols, false, gx.item_mut(n), false);
        gemm(s.c, p.cols(), p.rows(), input.item(n), false, &cols, true, gw.data_mut(), true);
    }
    sum_planes(grad_out, &mut gb);
    Ok(ConvGrads {
        input: Some(gx),
        weights: gw,
        bias: gb,
    })
}
