//! The two SR architectures, binarized only inside residual blocks.
//!
//! `ResnetSr` follows the SRResNet generator: head conv, `D` blocks of
//! `conv, BN, act, conv, BN` with identity skips, a post-block conv + BN with
//! a global skip, `log2(scale)` sub-pixel upsampling stages and a 1x1 tail.
//! `PyramidSr` is a Laplacian-pyramid network that predicts a residual image
//! at every 2x level and adds it to a learned upsampling of the previous
//! level's image. Its feature branch is shared across levels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::binary::{AlphaMode, BinaryConvLayer};
use crate::error::{shape_err, Error, Result};
use crate::graph::{BinaryPath, Layer, Network, NodeId, ParamCount, Region};
use crate::math::sqrt;
use crate::ops::{Activation, ConvSpec, RunningStats};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    ResnetSr,
    PyramidSr,
}

/// Nonlinearity used between convolutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActKind {
    /// Fixed negative slope, no parameters.
    Leaky(f32),
    /// Learned per-channel slope starting at the given value.
    PRelu(f32),
}

impl ActKind {
    fn layer(self, channels: usize) -> Layer {
        match self {
            ActKind::Leaky(s) => Layer::Act(Activation::LeakyRelu(s)),
            ActKind::PRelu(s) => Layer::Act(Activation::PRelu(vec![s; channels])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrModelConfig {
    pub family: Family,
    pub scale: usize,
    pub num_residual_blocks: usize,
    pub feature_channels: usize,
    pub binarize_residual: bool,
    pub use_batch_norm: bool,
    pub alpha_mode: AlphaMode,
    pub activation: ActKind,
    pub head_kernel: usize,
    pub tail_kernel: usize,
}

impl SrModelConfig {
    /// SRResNet defaults: 64 channels, batch norm, leaky slope 0.25.
    pub fn resnet(scale: usize, blocks: usize) -> Self {
        SrModelConfig {
            family: Family::ResnetSr,
            scale,
            num_residual_blocks: blocks,
            feature_channels: 64,
            binarize_residual: true,
            use_batch_norm: true,
            alpha_mode: AlphaMode::Learnable,
            activation: ActKind::Leaky(0.25),
            head_kernel: 3,
            tail_kernel: 1,
        }
    }

    /// Laplacian-pyramid defaults: 64 channels, no batch norm, leaky slope 0.2.
    pub fn pyramid(scale: usize, blocks: usize) -> Self {
        SrModelConfig {
            family: Family::PyramidSr,
            scale,
            num_residual_blocks: blocks,
            feature_channels: 64,
            binarize_residual: true,
            use_batch_norm: false,
            alpha_mode: AlphaMode::Learnable,
            activation: ActKind::Leaky(0.2),
            head_kernel: 3,
            tail_kernel: 3,
        }
    }

    pub fn with_binarize(mut self, on: bool) -> Self {
        self.binarize_residual = on;
        self
    }

    pub fn with_alpha_mode(mut self, mode: AlphaMode) -> Self {
        self.alpha_mode = mode;
        self
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.feature_channels = channels;
        self
    }

    /// Number of 2x stages.
    pub fn levels(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(Error::InvalidArgument(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.num_residual_blocks == 0 {
            return Err(Error::InvalidArgument(alloc::string::String::from("at least one residual block is required")));
        }
        if self.feature_channels == 0 {
            return Err(Error::InvalidArgument(alloc::string::String::from("feature_channels must be positive")));
        }
        if self.head_kernel % 2 == 0 || self.tail_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "head/tail kernels must be odd, got {}/{}",
                self.head_kernel, self.tail_kernel
            )));
        }
        Ok(())
    }
}

/// An instantiated SR network together with the configuration it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SrModel {
    config: SrModelConfig,
    network: Network,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Fan-in scaled uniform weights on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    fn kaiming(&mut self, shape: Shape, fan_in: usize) -> Tensor {
        let bound = (1.0 / sqrt(fan_in as f64)) as f32;
        let uniform = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..shape.len()).map(|_| uniform.sample(&mut self.rng)).collect();
        Tensor::from_vec(shape, data).expect("init shape")
    }

    fn conv(&mut self, spec: ConvSpec, bias: bool) -> Layer {
        Layer::Conv {
            spec,
            weight: self.kaiming(spec.weight_shape(), spec.filter_len()),
            bias: bias.then(|| vec![0.0; spec.out_channels]),
        }
    }

    fn block_conv(&mut self, cfg: &SrModelConfig, spec: ConvSpec) -> Layer {
        let weight = self.kaiming(spec.weight_shape(), spec.filter_len());
        let bias = Some(vec![0.0; spec.out_channels]);
        if cfg.binarize_residual {
            Layer::BinaryConv(BinaryConvLayer::new(spec, weight, bias, cfg.alpha_mode).expect("consistent spec"))
        } else {
            Layer::Conv { spec, weight, bias }
        }
    }
}

fn batch_norm(channels: usize) -> Layer {
    Layer::BatchNorm {
        gamma: None,
        beta: vec![0.0; channels],
        stats: RunningStats::new(channels),
    }
}

/// Bilinear 2x upsampling kernel for a stride-2, k=4, p=1 transposed conv.
fn bilinear_up2(channels: usize) -> Tensor {
    let taps = [0.25f32, 0.75, 0.75, 0.25];
    let spec = ConvSpec::new(channels, channels, 4, 2, 1);
    Tensor::from_fn(spec.transposed_weight_shape(), |i, o, y, x| if i == o { taps[y] * taps[x] } else { 0.0 })
}

impl SrModel {
    /// Builds a model with weights drawn from `seed`.
    pub fn build(config: SrModelConfig, seed: u64) -> Result<SrModel> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let network = match config.family {
            Family::ResnetSr => resnet_graph(&config, &mut init),
            Family::PyramidSr => pyramid_graph(&config, &mut init),
        };
        Ok(SrModel { config, network })
    }

    /// Wraps an existing graph, e.g. one read back from a file.
    pub fn from_parts(config: SrModelConfig, network: Network) -> Result<SrModel> {
        config.validate()?;
        Ok(SrModel { config, network })
    }

    pub fn config(&self) -> &SrModelConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    pub fn sync(&mut self) {
        self.network.sync();
    }

    fn check_input(&self, lr: &Tensor) -> Result<()> {
        if lr.shape().c != 3 {
            return Err(shape_err("SrModel::forward", format!("expected an RGB image, got {}", lr.shape())));
        }
        Ok(())
    }

    /// Super-resolves `lr (N,3,H,W)` using the multiplication-free binary kernel.
    pub fn forward(&self, lr: &Tensor) -> Result<Tensor> {
        self.check_input(lr)?;
        self.network.forward(lr, BinaryPath::MulFree)
    }

    /// Same as [`forward`](Self::forward) with binary convolutions evaluated densely.
    pub fn forward_dense(&self, lr: &Tensor) -> Result<Tensor> {
        self.check_input(lr)?;
        self.network.forward(lr, BinaryPath::Dense)
    }

    /// Every pyramid level's image, coarsest first. A resnet model has one.
    pub fn forward_levels(&self, lr: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(lr)?;
        self.network.forward_outputs(lr, BinaryPath::MulFree)
    }

    /// `(binary parameter count, real parameter count)`. Real parameters
    /// include scaling factors, biases and normalization statistics.
    pub fn count_parameters(&self) -> (usize, usize) {
        let p = self.param_count();
        (p.binary, p.real)
    }

    pub fn param_count(&self) -> ParamCount {
        self.network.param_count()
    }
}

/// Builds a `ResnetSr` model; `cfg.family` is overridden.
pub fn build_resnet_sr(cfg: SrModelConfig, seed: u64) -> Result<SrModel> {
    SrModel::build(SrModelConfig { family: Family::ResnetSr, ..cfg }, seed)
}

/// Builds a `PyramidSr` model; `cfg.family` is overridden.
pub fn build_pyramid_sr(cfg: SrModelConfig, seed: u64) -> Result<SrModel> {
    SrModel::build(SrModelConfig { family: Family::PyramidSr, ..cfg }, seed)
}

fn resnet_graph(cfg: &SrModelConfig, init: &mut Init) -> Network {
    let c = cfg.feature_channels;
    let mut net = Network::new();
    let head = net.push("head.conv", Region::Head, init.conv(ConvSpec::same(3, c, cfg.head_kernel), true), Network::INPUT);
    let head = net.push("head.act", Region::Head, cfg.activation.layer(c), head);

    let mut x = head;
    for b in 0..cfg.num_residual_blocks {
        let region = Region::ResidualBlock(b);
        let mut y = net.push(format!("block{b}.conv1"), region, init.block_conv(cfg, ConvSpec::same(c, c, 3)), x);
        if cfg.use_batch_norm {
            y = net.push(format!("block{b}.bn1"), region, batch_norm(c), y);
        }
        y = net.push(format!("block{b}.act"), region, cfg.activation.layer(c), y);
        y = net.push(format!("block{b}.conv2"), region, init.block_conv(cfg, ConvSpec::same(c, c, 3)), y);
        if cfg.use_batch_norm {
            y = net.push(format!("block{b}.bn2"), region, batch_norm(c), y);
        }
        x = net.add(x, y, region);
    }

    let mut y = net.push("body.conv", Region::Body, init.conv(ConvSpec::same(c, c, 3), true), x);
    if cfg.use_batch_norm {
        y = net.push("body.bn", Region::Body, batch_norm(c), y);
    }
    let mut x = net.add(head, y, Region::Body);

    for u in 0..cfg.levels() {
        x = net.push(format!("up{u}.conv"), Region::Upsample, init.conv(ConvSpec::same(c, 4 * c, 3), true), x);
        x = net.push(format!("up{u}.shuffle"), Region::Upsample, Layer::PixelShuffle(2), x);
        x = net.push(format!("up{u}.act"), Region::Upsample, cfg.activation.layer(c), x);
    }
    let out = net.push("tail.conv", Region::Tail, init.conv(ConvSpec::same(c, 3, cfg.tail_kernel), true), x);
    net.set_outputs(vec![out]);
    net
}

fn pyramid_graph(cfg: &SrModelConfig, init: &mut Init) -> Network {
    let c = cfg.feature_channels;
    let mut net = Network::new();
    let head = net.push("head.conv", Region::Head, init.conv(ConvSpec::same(3, c, cfg.head_kernel), true), Network::INPUT);
    let mut feat = net.push("head.act", Region::Head, cfg.activation.layer(c), head);

    let act = net.add_layer("branch.act", Region::Body, cfg.activation.layer(c));
    let blocks: Vec<_> = (0..cfg.num_residual_blocks)
        .map(|b| {
            let layer = init.block_conv(cfg, ConvSpec::same(c, c, 3));
            net.add_layer(format!("block{b}.conv"), Region::ResidualBlock(b), layer)
        })
        .collect();
    let up_conv = net.add_layer("up.conv", Region::Upsample, init.conv(ConvSpec::same(c, 4 * c, 3), true));
    let shuffle = net.add_layer("up.shuffle", Region::Upsample, Layer::PixelShuffle(2));
    let up_act = net.add_layer("up.act", Region::Upsample, cfg.activation.layer(c));
    let res_conv = net.add_layer("residual.conv", Region::Tail, init.conv(ConvSpec::same(c, 3, cfg.tail_kernel), false));
    let img_up = net.add_layer(
        "image.up",
        Region::Upsample,
        Layer::TransposedConv {
            spec: ConvSpec::new(3, 3, 4, 2, 1),
            weight: bilinear_up2(3),
            bias: None,
        },
    );

    let mut image: NodeId = Network::INPUT;
    let mut outputs = Vec::new();
    for _ in 0..cfg.levels() {
        for (b, &conv) in blocks.iter().enumerate() {
            let a = net.apply(act, feat);
            let y = net.apply(conv, a);
            feat = net.add(feat, y, Region::ResidualBlock(b));
        }
        feat = net.apply(up_conv, feat);
        feat = net.apply(shuffle, feat);
        feat = net.apply(up_act, feat);
        let residual = net.apply(res_conv, feat);
        let up = net.apply(img_up, image);
        image = net.add(up, residual, Region::Tail);
        outputs.push(image);
    }
    net.set_outputs(outputs);
    net
}
