//! Model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "BSRN"  u16 version
//! config: family u8, scale u8, blocks u32, channels u32, binarize u8,
//!         batch_norm u8, alpha_mode u8, act_kind u8, act_slope f32,
//!         head_kernel u8, tail_kernel u8
//! u32 layer count, then one record per layer:
//!   u8 kind tag
//!   conv-like kinds: in u32, out u32, kernel u32, stride u32, padding u32
//!   payload
//! ```
//!
//! Payloads: real convolutions store a bias flag, the weights and the bias as
//! f32. Binary convolutions store the mode, a bias flag, the scaling factors,
//! the bias, then the packed sign rows. Batch norm stores a gamma flag, the
//! channel count, gamma, beta, running mean and running variance.
//! Activations store a sub-tag and their slopes; pixel shuffle its factor.
//! The layer graph itself is rebuilt from the config header.

use std::fs;
use std::path::Path;

use bsr_core::binary::{AlphaMode, BinaryConvLayer, PackedBits};
use bsr_core::graph::Layer;
use bsr_core::model::ActKind;
use bsr_core::ops::{Activation, ConvSpec, RunningStats};
use bsr_core::{Family, SrModel, SrModelConfig, Tensor};

pub const MAGIC: &[u8; 4] = b"BSRN";
pub const VERSION: u16 = 1;

const TAG_CONV: u8 = 1;
const TAG_BINARY: u8 = 2;
const TAG_BN: u8 = 3;
const TAG_ACT: u8 = 4;
const TAG_SHUFFLE: u8 = 5;
const TAG_TRANSPOSED: u8 = 6;

/// Bytes before the first layer record.
pub const HEADER_BYTES: usize = 4 + 2 + 1 + 1 + 4 + 4 + 1 + 1 + 1 + 1 + 4 + 1 + 1 + 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("model is not synced; run a forward sync before saving")]
    Unsynced,
    #[error("{0}")]
    Io(String),
}

impl FormatError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u32 {
        match self {
            FormatError::BadMagic => 1,
            FormatError::UnsupportedVersion(_) => 2,
            FormatError::Truncated => 3,
            FormatError::Corrupt(_) => 4,
            FormatError::Unsynced => 5,
            FormatError::Io(_) => 6,
        }
    }
}

fn corrupt(msg: impl Into<String>) -> FormatError {
    FormatError::Corrupt(msg.into())
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn spec(&mut self, s: &ConvSpec) {
        for v in [s.in_channels, s.out_channels, s.kernel, s.stride, s.padding] {
            self.u32(v);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }
    fn u32(&mut self) -> Result<usize, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }
    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated)?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect())
    }
    fn flag(&mut self) -> Result<bool, FormatError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(corrupt(format!("flag byte {v}"))),
        }
    }
    fn spec(&mut self) -> Result<ConvSpec, FormatError> {
        Ok(ConvSpec::new(self.u32()?, self.u32()?, self.u32()?, self.u32()?, self.u32()?))
    }
}

fn mode_byte(m: AlphaMode) -> u8 {
    match m {
        AlphaMode::Learnable => 0,
        AlphaMode::Deterministic => 1,
    }
}

fn mode_from(b: u8) -> Result<AlphaMode, FormatError> {
    match b {
        0 => Ok(AlphaMode::Learnable),
        1 => Ok(AlphaMode::Deterministic),
        v => Err(corrupt(format!("alpha mode {v}"))),
    }
}

fn write_config(w: &mut Writer, c: &SrModelConfig) {
    w.u8(match c.family {
        Family::ResnetSr => 0,
        Family::PyramidSr => 1,
    });
    w.u8(c.scale as u8);
    w.u32(c.num_residual_blocks);
    w.u32(c.feature_channels);
    w.u8(c.binarize_residual as u8);
    w.u8(c.use_batch_norm as u8);
    w.u8(mode_byte(c.alpha_mode));
    let (kind, slope) = match c.activation {
        ActKind::Leaky(s) => (0, s),
        ActKind::PRelu(s) => (1, s),
    };
    w.u8(kind);
    w.f32s(&[slope]);
    w.u8(c.head_kernel as u8);
    w.u8(c.tail_kernel as u8);
}

fn read_config(r: &mut Reader<'_>) -> Result<SrModelConfig, FormatError> {
    let family = match r.u8()? {
        0 => Family::ResnetSr,
        1 => Family::PyramidSr,
        v => return Err(corrupt(format!("family {v}"))),
    };
    let scale = r.u8()? as usize;
    let num_residual_blocks = r.u32()?;
    let feature_channels = r.u32()?;
    let binarize_residual = r.flag()?;
    let use_batch_norm = r.flag()?;
    let alpha_mode = mode_from(r.u8()?)?;
    let activation = match (r.u8()?, r.f32()?) {
        (0, s) => ActKind::Leaky(s),
        (1, s) => ActKind::PRelu(s),
        (v, _) => return Err(corrupt(format!("activation kind {v}"))),
    };
    let head_kernel = r.u8()? as usize;
    let tail_kernel = r.u8()? as usize;
    let cfg = SrModelConfig {
        family,
        scale,
        num_residual_blocks,
        feature_channels,
        binarize_residual,
        use_batch_norm,
        alpha_mode,
        activation,
        head_kernel,
        tail_kernel,
    };
    cfg.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(cfg)
}

fn write_layer(w: &mut Writer, layer: &Layer) {
    match layer {
        Layer::Conv { spec, weight, bias } | Layer::TransposedConv { spec, weight, bias } => {
            w.u8(if matches!(layer, Layer::Conv { .. }) { TAG_CONV } else { TAG_TRANSPOSED });
            w.spec(spec);
            w.u8(bias.is_some() as u8);
            w.f32s(weight.data());
            if let Some(b) = bias {
                w.f32s(b);
            }
        }
        Layer::BinaryConv(b) => {
            w.u8(TAG_BINARY);
            w.spec(b.spec());
            w.u8(mode_byte(b.mode()));
            w.u8(b.bias().is_some() as u8);
            w.f32s(b.alpha());
            if let Some(bias) = b.bias() {
                w.f32s(bias);
            }
            w.buf.extend_from_slice(b.packed().bytes());
        }
        Layer::BatchNorm { gamma, beta, stats } => {
            w.u8(TAG_BN);
            w.u8(gamma.is_some() as u8);
            w.u32(beta.len());
            if let Some(g) = gamma {
                w.f32s(g);
            }
            w.f32s(beta);
            w.f32s(&stats.mean);
            w.f32s(&stats.var);
        }
        Layer::Act(a) => {
            w.u8(TAG_ACT);
            match a {
                Activation::Relu => w.u8(0),
                Activation::LeakyRelu(s) => {
                    w.u8(1);
                    w.f32s(&[*s]);
                }
                Activation::PRelu(s) => {
                    w.u8(2);
                    w.u32(s.len());
                    w.f32s(s);
                }
            }
        }
        Layer::PixelShuffle(r) => {
            w.u8(TAG_SHUFFLE);
            w.u8(*r as u8);
        }
    }
}

fn read_layer(r: &mut Reader<'_>, expected: &Layer) -> Result<Layer, FormatError> {
    let tag = r.u8()?;
    let want = match expected {
        Layer::Conv { .. } => TAG_CONV,
        Layer::BinaryConv(_) => TAG_BINARY,
        Layer::BatchNorm { .. } => TAG_BN,
        Layer::Act(_) => TAG_ACT,
        Layer::PixelShuffle(_) => TAG_SHUFFLE,
        Layer::TransposedConv { .. } => TAG_TRANSPOSED,
    };
    if tag != want {
        return Err(corrupt(format!("layer tag {tag}, expected {want}")));
    }
    let check_spec = |spec: &ConvSpec, exp: &ConvSpec| {
        if spec != exp {
            Err(corrupt(format!("conv spec {spec:?} does not match the architecture ({exp:?})")))
        } else {
            Ok(())
        }
    };
    Ok(match expected {
        Layer::Conv { spec: exp, .. } | Layer::TransposedConv { spec: exp, .. } => {
            let spec = r.spec()?;
            check_spec(&spec, exp)?;
            let has_bias = r.flag()?;
            let shape = if tag == TAG_CONV { spec.weight_shape() } else { spec.transposed_weight_shape() };
            let weight = Tensor::from_vec(shape, r.f32s(shape.len())?).map_err(|e| corrupt(e.to_string()))?;
            let bias = if has_bias { Some(r.f32s(spec.out_channels)?) } else { None };
            if tag == TAG_CONV {
                Layer::Conv { spec, weight, bias }
            } else {
                Layer::TransposedConv { spec, weight, bias }
            }
        }
        Layer::BinaryConv(exp) => {
            let spec = r.spec()?;
            check_spec(&spec, exp.spec())?;
            let mode = mode_from(r.u8()?)?;
            let has_bias = r.flag()?;
            let alpha = r.f32s(spec.out_channels)?;
            let bias = if has_bias { Some(r.f32s(spec.out_channels)?) } else { None };
            let row = PackedBits::row_bytes_for(spec.filter_len());
            let bytes = r.take(row * spec.out_channels)?.to_vec();
            let packed = PackedBits::from_raw(spec.out_channels, spec.in_channels, spec.kernel, bytes)
                .map_err(|e| corrupt(e.to_string()))?;
            Layer::BinaryConv(
                BinaryConvLayer::from_packed(spec, packed, alpha, bias, mode).map_err(|e| corrupt(e.to_string()))?,
            )
        }
        Layer::BatchNorm { beta: exp, .. } => {
            let has_gamma = r.flag()?;
            let c = r.u32()?;
            if c != exp.len() {
                return Err(corrupt(format!("batch norm over {c} channels, expected {}", exp.len())));
            }
            let gamma = if has_gamma { Some(r.f32s(c)?) } else { None };
            let beta = r.f32s(c)?;
            let mean = r.f32s(c)?;
            let var = r.f32s(c)?;
            Layer::BatchNorm {
                gamma,
                beta,
                stats: RunningStats { mean, var },
            }
        }
        Layer::Act(_) => Layer::Act(match r.u8()? {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu(r.f32()?),
            2 => {
                let n = r.u32()?;
                Activation::PRelu(r.f32s(n)?)
            }
            v => return Err(corrupt(format!("activation tag {v}"))),
        }),
        Layer::PixelShuffle(exp) => {
            let f = r.u8()? as usize;
            if f != *exp {
                return Err(corrupt(format!("pixel shuffle factor {f}")));
            }
            Layer::PixelShuffle(f)
        }
    })
}

/// Serializes a synced model.
pub fn encode(model: &SrModel) -> Result<Vec<u8>, FormatError> {
    if !model.network().is_synced() {
        return Err(FormatError::Unsynced);
    }
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    write_config(&mut w, model.config());
    let layers = model.network().layers();
    w.u32(layers.len());
    for slot in layers {
        write_layer(&mut w, &slot.layer);
    }
    Ok(w.buf)
}

pub fn decode(data: &[u8]) -> Result<SrModel, FormatError> {
    let mut r = Reader { data, pos: 0 };
    let magic = r.take(4).map_err(|_| FormatError::BadMagic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let config = read_config(&mut r)?;
    let mut model = SrModel::build(config, 0).map_err(|e| corrupt(e.to_string()))?;
    let count = r.u32()?;
    if count != model.network().layers().len() {
        return Err(corrupt(format!("{count} layers, architecture has {}", model.network().layers().len())));
    }
    for id in 0..count {
        let layer = read_layer(&mut r, model.network().layer(id))?;
        *model.network_mut().layer_mut(id) = layer;
    }
    if r.pos != data.len() {
        return Err(corrupt(format!("{} trailing bytes", data.len() - r.pos)));
    }
    Ok(model)
}

pub fn save_model(model: &SrModel, path: &Path) -> Result<(), FormatError> {
    let bytes = encode(model)?;
    fs::write(path, bytes).map_err(|e| FormatError::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<SrModel, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Bytes the file spends on anything other than packed weight bits and
/// 32-bit parameters: header, tags, flags, specs, counts, activation
/// constants and per-row bit padding.
pub fn overhead_bytes(model: &SrModel) -> usize {
    let mut total = HEADER_BYTES;
    let (mut bits, mut stored) = (0, 0);
    for slot in model.network().layers() {
        total += 1;
        total += match &slot.layer {
            Layer::Conv { .. } | Layer::TransposedConv { .. } => 20 + 1,
            Layer::BinaryConv(b) => {
                bits += b.packed().total_bits();
                stored += b.packed().bytes().len();
                20 + 1 + 1
            }
            Layer::BatchNorm { .. } => 1 + 4,
            Layer::Act(Activation::Relu) => 1,
            Layer::Act(Activation::LeakyRelu(_)) => 1 + 4,
            Layer::Act(Activation::PRelu(_)) => 1 + 4,
            Layer::PixelShuffle(_) => 1,
        };
    }
    total + stored - bits.div_ceil(8)
}
