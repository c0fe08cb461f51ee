//! Sign binarization, per-output-channel scaling factors and 1-bit packing.
//!
//! A binary convolution replaces its real filter bank `W` by `alpha * sign(W)`
//! where `alpha` holds one scale per output channel. The real-valued `W` is
//! kept as a shadow copy that training updates; the packed sign bits are
//! refreshed from it by [`BinaryConvLayer::sync`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::ops::ConvSpec;
use crate::tensor::{Shape, Tensor};

/// `+1` for `w >= 0` (zero included), `-1` otherwise.
#[inline]
pub fn binarize(w: f32) -> f32 {
    if w >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Mean absolute weight of each output filter of a `(F, C, k, k)` bank.
///
/// For fixed signs `B = sign(W)` this is the scale minimizing `||W - alpha B||^2`.
pub fn alpha_deterministic(weights: &Tensor) -> Vec<f32> {
    let s = weights.shape();
    let n = s.item();
    if n == 0 {
        return vec![0.0; s.n];
    }
    (0..s.n)
        .map(|f| {
            let l1: f64 = weights.item(f).iter().map(|&w| w.abs() as f64).sum();
            (l1 / n as f64) as f32
        })
        .collect()
}

/// How a layer's scaling factors evolve during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlphaMode {
    /// Trained by gradient descent like any other parameter.
    Learnable,
    /// Recomputed as the mean absolute shadow weight at every sync.
    Deterministic,
}

/// Sign bits of a `(F, C, k, k)` filter bank, one byte-padded row per output
/// filter, MSB first, bit set for `+1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBits {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    bytes: Vec<u8>,
}

impl PackedBits {
    pub fn row_bytes_for(bits_per_filter: usize) -> usize {
        bits_per_filter.div_ceil(8)
    }

    /// Packs a tensor whose entries are exactly `+1.0` or `-1.0`.
    pub fn pack(signs: &Tensor) -> Result<PackedBits> {
        let s = signs.shape();
        if s.h != s.w {
            return Err(shape_err("pack", format!("non-square kernel in {s}")));
        }
        let n = s.item();
        let row_bytes = Self::row_bytes_for(n);
        let mut bytes = vec![0u8; s.n * row_bytes];
        for f in 0..s.n {
            let row = &mut bytes[f * row_bytes..(f + 1) * row_bytes];
            for (i, &v) in signs.item(f).iter().enumerate() {
                if v == 1.0 {
                    row[i / 8] |= 0x80 >> (i % 8);
                } else if v != -1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "pack expects +1/-1 entries, found {v} in filter {f}"
                    )));
                }
            }
        }
        Ok(PackedBits {
            out_channels: s.n,
            in_channels: s.c,
            kernel: s.h,
            bytes,
        })
    }

    /// Packs `sign(w)` directly from real weights.
    pub fn from_weights(weights: &Tensor) -> PackedBits {
        let s = weights.shape();
        let n = s.item();
        let row_bytes = Self::row_bytes_for(n);
        let mut bytes = vec![0u8; s.n * row_bytes];
        for f in 0..s.n {
            let row = &mut bytes[f * row_bytes..(f + 1) * row_bytes];
            for (i, &w) in weights.item(f).iter().enumerate() {
                if w >= 0.0 {
                    row[i / 8] |= 0x80 >> (i % 8);
                }
            }
        }
        PackedBits {
            out_channels: s.n,
            in_channels: s.c,
            kernel: s.h,
            bytes,
        }
    }

    /// Rebuilds from stored rows, rejecting wrong lengths and set padding bits.
    pub fn from_raw(out_channels: usize, in_channels: usize, kernel: usize, bytes: Vec<u8>) -> Result<PackedBits> {
        let n = in_channels * kernel * kernel;
        let row_bytes = Self::row_bytes_for(n);
        if bytes.len() != out_channels * row_bytes {
            return Err(Error::InvalidArgument(format!(
                "{} packed bytes, expected {}",
                bytes.len(),
                out_channels * row_bytes
            )));
        }
        if n % 8 != 0 {
            let mask = 0xFFu8 >> (n % 8);
            for f in 0..out_channels {
                if bytes[(f + 1) * row_bytes - 1] & mask != 0 {
                    return Err(Error::InvalidArgument(format!("nonzero padding bits in filter {f}")));
                }
            }
        }
        Ok(PackedBits {
            out_channels,
            in_channels,
            kernel,
            bytes,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn bits_per_filter(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn row_bytes(&self) -> usize {
        Self::row_bytes_for(self.bits_per_filter())
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn row(&self, f: usize) -> &[u8] {
        let rb = self.row_bytes();
        &self.bytes[f * rb..(f + 1) * rb]
    }

    #[inline]
    pub fn bit(&self, f: usize, i: usize) -> bool {
        self.row(f)[i / 8] & (0x80 >> (i % 8)) != 0
    }

    /// Total weight bits, padding excluded.
    pub fn total_bits(&self) -> usize {
        self.out_channels * self.bits_per_filter()
    }

    /// Number of weight bits that differ from `other`.
    pub fn hamming(&self, other: &PackedBits) -> usize {
        self.bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn unpack(&self) -> Tensor {
        let shape = Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel);
        let n = self.bits_per_filter();
        let mut data = Vec::with_capacity(shape.len());
        for f in 0..self.out_channels {
            data.extend((0..n).map(|i| if self.bit(f, i) { 1.0 } else { -1.0 }));
        }
        Tensor::from_vec(shape, data).expect("unpack shape")
    }
}

/// A convolution whose weights are `alpha_f * B_f` with `B = sign(W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryConvLayer {
    spec: ConvSpec,
    shadow: Tensor,
    packed: PackedBits,
    alpha: Vec<f32>,
    bias: Option<Vec<f32>>,
    mode: AlphaMode,
    synced: bool,
}

impl BinaryConvLayer {
    /// Wraps real shadow weights. Both modes start from the mean-absolute
    /// scale, and the layer is returned synced.
    pub fn new(spec: ConvSpec, shadow: Tensor, bias: Option<Vec<f32>>, mode: AlphaMode) -> Result<Self> {
        if shadow.shape() != spec.weight_shape() {
            return Err(shape_err(
                "BinaryConvLayer::new",
                format!("weights {}, expected {}", shadow.shape(), spec.weight_shape()),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != spec.out_channels {
                return Err(shape_err("BinaryConvLayer::new", format!("{} bias entries", b.len())));
            }
        }
        let alpha = alpha_deterministic(&shadow);
        let packed = PackedBits::from_weights(&shadow);
        Ok(BinaryConvLayer {
            spec,
            shadow,
            packed,
            alpha,
            bias,
            mode,
            synced: true,
        })
    }

    /// Rebuilds a layer from stored sign bits and scales. The shadow weights
    /// are chosen so that a later sync reproduces the same bits and scales:
    /// `alpha * B` for deterministic layers, `B` for learnable ones.
    pub fn from_packed(
        spec: ConvSpec,
        packed: PackedBits,
        alpha: Vec<f32>,
        bias: Option<Vec<f32>>,
        mode: AlphaMode,
    ) -> Result<Self> {
        let expected = spec.weight_shape();
        if packed.out_channels != expected.n || packed.in_channels != expected.c || packed.kernel != expected.h {
            return Err(shape_err("BinaryConvLayer::from_packed", format!("packed bits do not match {expected}")));
        }
        if alpha.len() != spec.out_channels || bias.as_ref().is_some_and(|b| b.len() != spec.out_channels) {
            return Err(shape_err("BinaryConvLayer::from_packed", String::from("scale or bias length")));
        }
        if mode == AlphaMode::Deterministic && alpha.iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidArgument(String::from("negative deterministic scale")));
        }
        let signs = packed.unpack();
        let shadow = match mode {
            AlphaMode::Learnable => signs,
            AlphaMode::Deterministic => scale_rows(&signs, &alpha),
        };
        Ok(BinaryConvLayer {
            spec,
            shadow,
            packed,
            alpha,
            bias,
            mode,
            synced: true,
        })
    }

    /// Forward sync: refresh deterministic scales from the shadow weights,
    /// then repack `B = sign(W)`. Learnable scales are left untouched.
    pub fn sync(&mut self) {
        if self.mode == AlphaMode::Deterministic {
            self.alpha = alpha_deterministic(&self.shadow);
        }
        self.packed = PackedBits::from_weights(&self.shadow);
        self.synced = true;
    }

    /// `alpha_f * B_f` for every output filter.
    pub fn effective_weights(&self) -> Tensor {
        scale_rows(&self.packed.unpack(), &self.alpha)
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn shadow(&self) -> &Tensor {
        &self.shadow
    }

    /// Mutable shadow weights; marks the packed bits stale.
    pub fn shadow_mut(&mut self) -> &mut Tensor {
        self.synced = false;
        &mut self.shadow
    }

    pub fn packed(&self) -> &PackedBits {
        &self.packed
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn alpha_mut(&mut self) -> &mut [f32] {
        &mut self.alpha
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f32]> {
        self.bias.as_deref_mut()
    }

    pub fn mode(&self) -> AlphaMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: AlphaMode) {
        self.mode = mode;
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }
}

fn scale_rows(signs: &Tensor, alpha: &[f32]) -> Tensor {
    let mut out = signs.clone();
    for (f, &a) in alpha.iter().enumerate() {
        out.item_mut(f).iter_mut().for_each(|v| *v *= a);
    }
    out
}
