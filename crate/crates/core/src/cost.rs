//! Operation counts, the cycle cost model and model-size accounting.
//!
//! Counts use the spatial size each layer actually runs at. A real
//! convolution costs `M*N*C*K*K*F` multiply-accumulates; a binary one costs
//! the same number of additions, as many weight-bit reads, and `M*N*F`
//! multiplications for the per-channel scale.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Layer, Network, NodeId, Op, ParamCount, Region};
use crate::model::SrModel;
use crate::tensor::Shape;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpEntry {
    pub node: NodeId,
    pub name: String,
    pub kind: &'static str,
    pub region: Region,
    pub mults: u64,
    pub adds: u64,
    pub bitops: u64,
}

impl OpEntry {
    pub fn is_conv(&self) -> bool {
        matches!(self.kind, "conv" | "binary_conv" | "transposed_conv")
    }
}

/// Per-node operation counts for one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpReport {
    pub entries: Vec<OpEntry>,
}

impl OpReport {
    pub fn mults(&self) -> u64 {
        self.entries.iter().map(|e| e.mults).sum()
    }

    pub fn adds(&self) -> u64 {
        self.entries.iter().map(|e| e.adds).sum()
    }

    pub fn bitops(&self) -> u64 {
        self.entries.iter().map(|e| e.bitops).sum()
    }

    /// Multiplications performed by convolution layers.
    pub fn conv_mults(&self) -> u64 {
        self.entries.iter().filter(|e| e.is_conv()).map(|e| e.mults).sum()
    }

    /// Convolution multiplications inside residual blocks.
    pub fn residual_conv_mults(&self) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.is_conv() && e.region.is_residual_block())
            .map(|e| e.mults)
            .sum()
    }

    /// Share of convolution multiplications that sit in residual blocks.
    pub fn residual_conv_fraction(&self) -> f64 {
        let total = self.conv_mults();
        if total == 0 {
            return 0.0;
        }
        self.residual_conv_mults() as f64 / total as f64
    }
}

/// Counts operations of `net` for one input item of shape `input`.
pub fn count_network_ops(net: &Network, input: Shape) -> Result<OpReport> {
    let shapes = net.infer_shapes(Shape { n: 1, ..input })?;
    let mut entries = Vec::new();
    for (i, node) in net.nodes().iter().enumerate() {
        let out = shapes[i];
        let elems = out.len() as u64;
        let (name, kind, mults, adds, bitops) = match node.op {
            Op::Input => continue,
            Op::Add { .. } => (String::from("add"), "add", 0, elems, 0),
            Op::Apply { layer, input } => {
                let slot = &net.layers()[layer];
                let locations = out.plane() as u64;
                let (m, a, b) = match &slot.layer {
                    Layer::Conv { spec, .. } => {
                        let macs = locations * (spec.filter_len() * spec.out_channels) as u64;
                        (macs, macs, 0)
                    }
                    Layer::BinaryConv(bl) => {
                        let spec = bl.spec();
                        let taps = locations * (spec.filter_len() * spec.out_channels) as u64;
                        (locations * spec.out_channels as u64, taps, taps)
                    }
                    Layer::TransposedConv { spec, .. } => {
                        let macs = shapes[input].plane() as u64 * (spec.filter_len() * spec.out_channels) as u64;
                        (macs, macs, 0)
                    }
                    Layer::BatchNorm { .. } => (elems, elems, 0),
                    Layer::Act(_) => (elems, 0, 0),
                    Layer::PixelShuffle(_) => (0, 0, 0),
                };
                (slot.name.clone(), slot.layer.kind(), m, a, b)
            }
        };
        entries.push(OpEntry {
            node: i,
            name,
            kind,
            region: node.region,
            mults,
            adds,
            bitops,
        });
    }
    Ok(OpReport { entries })
}

/// Counts operations for an LR input of `input_hw`.
pub fn count_ops(model: &SrModel, input_hw: (usize, usize)) -> Result<OpReport> {
    count_network_ops(model.network(), Shape::new(1, 3, input_hw.0, input_hw.1))
}

/// Analytical throughput of a CPU core.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub flops_per_cycle: f64,
    pub bitops_per_cycle: f64,
    /// How many times faster an addition is than a multiplication.
    pub add_vs_mult_speed_ratio: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            flops_per_cycle: 4.0,
            bitops_per_cycle: 512.0,
            add_vs_mult_speed_ratio: 3.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if self.flops_per_cycle > 0.0 && self.bitops_per_cycle > 0.0 && self.add_vs_mult_speed_ratio > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(String::from("cost model rates must be positive")))
        }
    }

    pub fn cycles(&self, r: &OpReport) -> f64 {
        r.mults() as f64 / self.flops_per_cycle
            + r.adds() as f64 / (self.flops_per_cycle * self.add_vs_mult_speed_ratio)
            + r.bitops() as f64 / self.bitops_per_cycle
    }
}

/// `cycles(real) / cycles(binary)`.
pub fn estimate_speedup(report_real: &OpReport, report_bin: &OpReport, cm: &CostModel) -> Result<f64> {
    cm.validate()?;
    let bin = cm.cycles(report_bin);
    if bin <= 0.0 {
        return Err(Error::InvalidArgument(String::from("binary report has no operations")));
    }
    Ok(cm.cycles(report_real) / bin)
}

/// Storage needed for a model and for its all-real twin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeReport {
    pub binary_param_bits: u64,
    pub real_param_count: u64,
    /// Packed bits plus 32-bit reals.
    pub binary_model_bytes: u64,
    /// Every weight stored as a 32-bit real (scaling factors dropped).
    pub real_model_bytes: u64,
}

pub const BYTES_PER_MB: f64 = 1e6;

impl SizeReport {
    pub fn from_counts(p: ParamCount) -> SizeReport {
        let bits = p.binary as u64;
        let real = p.real as u64;
        SizeReport {
            binary_param_bits: bits,
            real_param_count: real,
            binary_model_bytes: bits.div_ceil(8) + 4 * real,
            real_model_bytes: 4 * (bits + real - p.alphas as u64),
        }
    }

    pub fn binary_mb(&self) -> f64 {
        self.binary_model_bytes as f64 / BYTES_PER_MB
    }

    pub fn real_mb(&self) -> f64 {
        self.real_model_bytes as f64 / BYTES_PER_MB
    }
}

pub fn model_size(model: &SrModel) -> SizeReport {
    SizeReport::from_counts(model.param_count())
}
