//! Sub-pixel rearrangement between channels and space.

use alloc::format;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// `(N, C*r*r, H, W) -> (N, C, rH, rW)` with
/// `out[n, c, r*h + dy, r*w + dx] = in[n, c*r*r + dy*r + dx, h, w]`.
pub fn pixel_shuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_shuffle factor must be positive".into()));
    }
    let s = input.shape();
    if s.c % (r * r) != 0 {
        return Err(shape_err(
            "pixel_shuffle",
            format!("{} channels not divisible by r^2 = {}", s.c, r * r),
        ));
    }
    let oc = s.c / (r * r);
    let os = Shape::new(s.n, oc, s.h * r, s.w * r);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        for c in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = c * r * r + dy * r + dx;
                    for h in 0..s.h {
                        let row = s.index(n, ic, h, 0);
                        for w in 0..s.w {
                            dst[os.index(n, c, h * r + dy, w * r + dx)] = src[row + w];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]; also its adjoint, so it carries gradients back.
pub fn pixel_unshuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::InvalidArgument("pixel_unshuffle factor must be positive".into()));
    }
    let s = input.shape();
    if s.h % r != 0 || s.w % r != 0 {
        return Err(shape_err(
            "pixel_unshuffle",
            format!("spatial size {}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let os = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut out = Tensor::zeros(os);
    let src = input.data();
    let dst = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = c * r * r + dy * r + dx;
                    for h in 0..os.h {
                        for w in 0..os.w {
                            dst[os.index(n, oc, h, w)] = src[s.index(n, c, h * r + dy, w * r + dx)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
