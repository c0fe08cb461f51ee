use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Pointwise nonlinearities. `PRelu` carries one slope per channel.
#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    PRelu(Vec<f32>),
}

impl Activation {
    fn slope(&self, channel: usize) -> f32 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => *s,
            Activation::PRelu(s) => s[channel],
        }
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        if let Activation::PRelu(s) = self {
            let c = input.shape().c;
            if s.len() != c {
                return Err(shape_err(
                    "activation",
                    format!("{} PReLU slopes for {c} channels", s.len()),
                ));
            }
        }
        Ok(())
    }
}

pub fn activation(input: &Tensor, kind: &Activation) -> Result<Tensor> {
    kind.check(input)?;
    let s = input.shape();
    let mut out = input.clone();
    for n in 0..s.n {
        for (c, plane) in out.item_mut(n).chunks_mut(s.plane()).enumerate() {
            let slope = kind.slope(c);
            for v in plane {
                if *v < 0.0 {
                    *v *= slope;
                }
            }
        }
    }
    Ok(out)
}

/// Returns the input gradient and, for PReLU, the per-channel slope gradient.
pub fn activation_backward(input: &Tensor, grad_out: &Tensor, kind: &Activation) -> Result<(Tensor, Option<Vec<f32>>)> {
    kind.check(input)?;
    let s = input.shape();
    if grad_out.shape() != s {
        return Err(shape_err("activation_backward", format!("{} vs {s}", grad_out.shape())));
    }
    let mut gx = grad_out.clone();
    let mut gslope = matches!(kind, Activation::PRelu(_)).then(|| vec![0.0f32; s.c]);
    for n in 0..s.n {
        let x = input.item(n);
        for (c, plane) in gx.item_mut(n).chunks_mut(s.plane()).enumerate() {
            let slope = kind.slope(c);
            let xs = &x[c * s.plane()..(c + 1) * s.plane()];
            let mut acc = 0.0f32;
            for (g, &xv) in plane.iter_mut().zip(xs) {
                if xv < 0.0 {
                    acc += *g * xv;
                    *g *= slope;
                }
            }
            if let Some(gs) = gslope.as_mut() {
                gs[c] += acc;
            }
        }
    }
    Ok((gx, gslope))
}
