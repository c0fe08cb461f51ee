//! Layer graph shared by both SR families.
//!
//! A [`Network`] owns a list of layers and a topologically ordered list of
//! nodes. A node either applies a layer to an earlier node or adds two
//! earlier nodes, so a layer may be applied more than once (the pyramid model
//! reuses its feature branch at every level).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::binary::BinaryConvLayer;
use crate::error::{shape_err, Error, Result};
use crate::mulfree::binconv_mulfree;
use crate::ops::norm::BN_EPSILON;
use crate::ops::{
    activation, batch_norm_infer, conv2d, pixel_shuffle, transposed_conv2d, Activation, ConvSpec, RunningStats,
};
use crate::tensor::{Shape, Tensor};

pub type NodeId = usize;
pub type LayerId = usize;

/// Architectural position of a layer or node, used for op accounting and for
/// checking where binarization is allowed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Head,
    ResidualBlock(usize),
    Body,
    Upsample,
    Tail,
}

impl Region {
    pub fn is_residual_block(self) -> bool {
        matches!(self, Region::ResidualBlock(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        spec: ConvSpec,
        weight: Tensor,
        bias: Option<Vec<f32>>,
    },
    BinaryConv(BinaryConvLayer),
    /// Per-channel normalization; `gamma: None` is a fixed unit scale.
    BatchNorm {
        gamma: Option<Vec<f32>>,
        beta: Vec<f32>,
        stats: RunningStats,
    },
    Act(Activation),
    PixelShuffle(usize),
    /// Weights in `(C_in, C_out, k, k)` layout.
    TransposedConv {
        spec: ConvSpec,
        weight: Tensor,
        bias: Option<Vec<f32>>,
    },
}

/// Parameter tally of one layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    /// Sign bits of binarized filters.
    pub binary: usize,
    /// Real-valued parameters, scaling factors included.
    pub real: usize,
    /// Scaling factors alone (a subset of `real`).
    pub alphas: usize,
}

impl core::ops::Add for ParamCount {
    type Output = ParamCount;
    fn add(self, o: ParamCount) -> ParamCount {
        ParamCount {
            binary: self.binary + o.binary,
            real: self.real + o.real,
            alphas: self.alphas + o.alphas,
        }
    }
}

/// Which kernel evaluates binary convolutions during inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryPath {
    /// Packed bits, additions only.
    MulFree,
    /// Dense convolution with `alpha * B`.
    Dense,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::BinaryConv(_) => "binary_conv",
            Layer::BatchNorm { .. } => "bn",
            Layer::Act(_) => "act",
            Layer::PixelShuffle(_) => "pixel_shuffle",
            Layer::TransposedConv { .. } => "transposed_conv",
        }
    }

    pub fn param_count(&self) -> ParamCount {
        let bias_len = |b: &Option<Vec<f32>>| b.as_ref().map_or(0, Vec::len);
        match self {
            Layer::Conv { weight, bias, .. } | Layer::TransposedConv { weight, bias, .. } => ParamCount {
                binary: 0,
                real: weight.len() + bias_len(bias),
                alphas: 0,
            },
            Layer::BinaryConv(b) => ParamCount {
                binary: b.packed().total_bits(),
                real: b.alpha().len() + b.bias().map_or(0, <[f32]>::len),
                alphas: b.alpha().len(),
            },
            Layer::BatchNorm { gamma, beta, stats } => ParamCount {
                binary: 0,
                real: bias_len(gamma) + beta.len() + stats.mean.len() + stats.var.len(),
                alphas: 0,
            },
            Layer::Act(Activation::PRelu(s)) => ParamCount {
                binary: 0,
                real: s.len(),
                alphas: 0,
            },
            Layer::Act(_) | Layer::PixelShuffle(_) => ParamCount::default(),
        }
    }

    /// Output shape for an input of shape `s`.
    pub fn output_shape(&self, s: Shape) -> Result<Shape> {
        let conv_in = |spec: &ConvSpec| {
            if s.c != spec.in_channels {
                Err(shape_err(
                    "Layer::output_shape",
                    format!("{} input channels, layer expects {}", s.c, spec.in_channels),
                ))
            } else {
                Ok(())
            }
        };
        match self {
            Layer::Conv { spec, .. } => {
                conv_in(spec)?;
                let (h, w) = spec.output_hw(s.h, s.w)?;
                Ok(Shape::new(s.n, spec.out_channels, h, w))
            }
            Layer::BinaryConv(b) => {
                conv_in(b.spec())?;
                let (h, w) = b.spec().output_hw(s.h, s.w)?;
                Ok(Shape::new(s.n, b.spec().out_channels, h, w))
            }
            Layer::TransposedConv { spec, .. } => {
                conv_in(spec)?;
                let (h, w) = spec.transposed_output_hw(s.h, s.w)?;
                Ok(Shape::new(s.n, spec.out_channels, h, w))
            }
            Layer::PixelShuffle(r) => {
                if s.c % (r * r) != 0 {
                    return Err(shape_err("Layer::output_shape", format!("{} channels not divisible by {}", s.c, r * r)));
                }
                Ok(Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r))
            }
            Layer::BatchNorm { beta, .. } => {
                if beta.len() != s.c {
                    return Err(shape_err("Layer::output_shape", format!("{} channels for batch norm of {}", s.c, beta.len())));
                }
                Ok(s)
            }
            Layer::Act(_) => Ok(s),
        }
    }

    /// Inference-mode evaluation.
    pub fn forward(&self, x: &Tensor, path: BinaryPath) -> Result<Tensor> {
        match self {
            Layer::Conv { spec, weight, bias } => conv2d(x, weight, bias.as_deref(), spec),
            Layer::BinaryConv(b) => match path {
                BinaryPath::MulFree => binconv_mulfree(x, b),
                BinaryPath::Dense => {
                    if !b.is_synced() {
                        return Err(Error::Unsynced(String::from("dense binary conv")));
                    }
                    conv2d(x, &b.effective_weights(), b.bias(), b.spec())
                }
            },
            Layer::BatchNorm { gamma, beta, stats } => batch_norm_infer(x, gamma.as_deref(), beta, stats, BN_EPSILON),
            Layer::Act(a) => activation(x, a),
            Layer::PixelShuffle(r) => pixel_shuffle(x, *r),
            Layer::TransposedConv { spec, weight, bias } => transposed_conv2d(x, weight, bias.as_deref(), spec),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSlot {
    pub name: String,
    pub region: Region,
    pub layer: Layer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Apply { layer: LayerId, input: NodeId },
    Add { lhs: NodeId, rhs: NodeId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Node {
    pub op: Op,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerSlot>,
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
}

impl Default for Network {
    fn default() -> Self {
        Network::new()
    }
}

impl Network {
    /// An empty graph holding only the input node (id 0).
    pub fn new() -> Self {
        Network {
            layers: Vec::new(),
            nodes: vec![Node {
                op: Op::Input,
                region: Region::Head,
            }],
            outputs: Vec::new(),
        }
    }

    pub const INPUT: NodeId = 0;

    pub fn add_layer(&mut self, name: impl Into<String>, region: Region, layer: Layer) -> LayerId {
        self.layers.push(LayerSlot {
            name: name.into(),
            region,
            layer,
        });
        self.layers.len() - 1
    }

    /// Applies an existing layer to `input`; the node takes the layer's region.
    pub fn apply(&mut self, layer: LayerId, input: NodeId) -> NodeId {
        assert!(layer < self.layers.len() && input < self.nodes.len(), "graph edges must point backwards");
        let region = self.layers[layer].region;
        self.nodes.push(Node {
            op: Op::Apply { layer, input },
            region,
        });
        self.nodes.len() - 1
    }

    /// Adds a fresh layer and applies it to `input`.
    pub fn push(&mut self, name: impl Into<String>, region: Region, layer: Layer, input: NodeId) -> NodeId {
        let id = self.add_layer(name, region, layer);
        self.apply(id, input)
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId, region: Region) -> NodeId {
        assert!(lhs < self.nodes.len() && rhs < self.nodes.len(), "graph edges must point backwards");
        self.nodes.push(Node {
            op: Op::Add { lhs, rhs },
            region,
        });
        self.nodes.len() - 1
    }

    /// Marks the nodes returned by a forward pass; the last one is the final image.
    pub fn set_outputs(&mut self, outputs: Vec<NodeId>) {
        assert!(outputs.iter().all(|&o| o < self.nodes.len()));
        self.outputs = outputs;
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerSlot] {
        &mut self.layers
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id].layer
    }

    pub fn layer_mut(&mut self, id: LayerId) -> &mut Layer {
        &mut self.layers[id].layer
    }

    pub fn binary_layers(&self) -> impl Iterator<Item = (LayerId, &BinaryConvLayer)> {
        self.layers.iter().enumerate().filter_map(|(i, s)| match &s.layer {
            Layer::BinaryConv(b) => Some((i, b)),
            _ => None,
        })
    }

    /// Forward sync of every binary layer.
    pub fn sync(&mut self) {
        for slot in &mut self.layers {
            if let Layer::BinaryConv(b) = &mut slot.layer {
                b.sync();
            }
        }
    }

    pub fn is_synced(&self) -> bool {
        self.binary_layers().all(|(_, b)| b.is_synced())
    }

    pub fn param_count(&self) -> ParamCount {
        self.layers.iter().map(|s| s.layer.param_count()).fold(ParamCount::default(), |a, b| a + b)
    }

    /// Shape of every node for a given input shape.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let s = match node.op {
                Op::Input => input,
                Op::Apply { layer, input } => self.layers[layer].layer.output_shape(shapes[input])?,
                Op::Add { lhs, rhs } => {
                    if shapes[lhs] != shapes[rhs] {
                        return Err(shape_err("Network::infer_shapes", format!("adding {} and {}", shapes[lhs], shapes[rhs])));
                    }
                    shapes[lhs]
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Index of the last node reading each node's value.
    fn last_uses(&self) -> Vec<NodeId> {
        let mut last: Vec<NodeId> = (0..self.nodes.len()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Input => {}
                Op::Apply { input, .. } => last[input] = i,
                Op::Add { lhs, rhs } => {
                    last[lhs] = i;
                    last[rhs] = i;
                }
            }
        }
        for &o in &self.outputs {
            last[o] = usize::MAX;
        }
        last
    }

    /// Inference pass returning the output nodes' values. Intermediate values
    /// are dropped as soon as no later node reads them.
    pub fn forward_outputs(&self, input: &Tensor, path: BinaryPath) -> Result<Vec<Tensor>> {
        if self.outputs.is_empty() {
            return Err(Error::InvalidArgument(String::from("network has no outputs")));
        }
        let last = self.last_uses();
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let v = match node.op {
                Op::Input => input.clone(),
                Op::Apply { layer, input } => {
                    let x = values[input].as_ref().expect("topological order");
                    self.layers[layer].layer.forward(x, path)?
                }
                Op::Add { lhs, rhs } => {
                    let a = values[lhs].as_ref().expect("topological order");
                    let b = values[rhs].as_ref().expect("topological order");
                    a.add(b)?
                }
            };
            values[i] = Some(v);
            match node.op {
                Op::Apply { input, .. } if last[input] == i => values[input] = None,
                Op::Add { lhs, rhs } => {
                    if last[lhs] == i {
                        values[lhs] = None;
                    }
                    if last[rhs] == i {
                        values[rhs] = None;
                    }
                }
                _ => {}
            }
        }
        Ok(self.outputs.iter().map(|&o| values[o].clone().expect("output kept")).collect())
    }

    /// Final output of an inference pass.
    pub fn forward(&self, input: &Tensor, path: BinaryPath) -> Result<Tensor> {
        Ok(self.forward_outputs(input, path)?.pop().expect("non-empty outputs"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_layer_applied_twice() {
        let mut net = Network::new();
        let spec = ConvSpec::same(1, 1, 1);
        let id = net.add_layer(
            "double",
            Region::Body,
            Layer::Conv {
                spec,
                weight: Tensor::filled(spec.weight_shape(), 2.0),
                bias: None,
            },
        );
        let a = net.apply(id, Network::INPUT);
        let b = net.apply(id, a);
        let c = net.add(a, b, Region::Tail);
        net.set_outputs(vec![a, c]);
        let x = Tensor::filled(Shape::new(1, 1, 2, 2), 1.5);
        let outs = net.forward_outputs(&x, BinaryPath::Dense).unwrap();
        assert!(outs[0].data().iter().all(|&v| v == 3.0));
        assert!(outs[1].data().iter().all(|&v| v == 9.0));
        assert_eq!(net.param_count().real, 1);
        assert_eq!(net.infer_shapes(x.shape()).unwrap()[c], x.shape());
    }
}
