//! Straight-through training of binary-weight networks.
//!
//! One step is: forward sync of every binary layer, a taped forward pass using
//! `alpha * B` as the weight of each binary convolution, loss, a backward pass
//! that routes the weight gradient of each binary layer to its real shadow
//! weights (scaled by `1/alpha`, then clipped), and an optimizer update of the
//! shadow weights and every real parameter. Binarization happens only at the
//! next sync.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::{AlphaMode, BinaryConvLayer};
use crate::data::{bicubic_resize, psnr_y, sample_and_augment_with, ResizeFactor, NOISE_STD};
use crate::error::{shape_err, Error, Result};
use crate::graph::{Layer, LayerId, Network, NodeId, Op};
use crate::math::{powi, sqrtf};
use crate::model::SrModel;
use crate::ops::conv::conv2d_backward_with;
use crate::ops::norm::{BN_EPSILON, BN_MOMENTUM};
use crate::ops::{
    activation, activation_backward, batch_norm_backward, batch_norm_train, conv2d, pixel_shuffle, pixel_unshuffle,
    transposed_conv2d, transposed_conv2d_backward, Activation, BatchNormCache,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    Alpha,
    Gamma,
    Beta,
    Slope,
}

/// Identity of one trainable parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub layer: LayerId,
    pub kind: ParamKind,
}

impl ParamKey {
    pub const fn new(layer: LayerId, kind: ParamKind) -> Self {
        ParamKey { layer, kind }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::Alpha => "alpha",
            ParamKind::Gamma => "gamma",
            ParamKind::Beta => "beta",
            ParamKind::Slope => "slope",
        };
        write!(f, "layer{}.{kind}", self.layer)
    }
}

/// Trainable parameters of `net` with their lengths, in a fixed order.
/// Deterministic scaling factors are derived, not trained, and are absent.
pub fn trainable_params(net: &Network) -> Vec<(ParamKey, usize)> {
    let mut out = Vec::new();
    for (id, slot) in net.layers().iter().enumerate() {
        let key = |kind| ParamKey::new(id, kind);
        match &slot.layer {
            Layer::Conv { weight, bias, .. } | Layer::TransposedConv { weight, bias, .. } => {
                out.push((key(ParamKind::Weight), weight.len()));
                if let Some(b) = bias {
                    out.push((key(ParamKind::Bias), b.len()));
                }
            }
            Layer::BinaryConv(b) => {
                out.push((key(ParamKind::Weight), b.shadow().len()));
                if let Some(bias) = b.bias() {
                    out.push((key(ParamKind::Bias), bias.len()));
                }
                if b.mode() == AlphaMode::Learnable {
                    out.push((key(ParamKind::Alpha), b.alpha().len()));
                }
            }
            Layer::BatchNorm { gamma, beta, .. } => {
                if let Some(g) = gamma {
                    out.push((key(ParamKind::Gamma), g.len()));
                }
                out.push((key(ParamKind::Beta), beta.len()));
            }
            Layer::Act(Activation::PRelu(s)) => out.push((key(ParamKind::Slope), s.len())),
            Layer::Act(_) | Layer::PixelShuffle(_) => {}
        }
    }
    out
}

/// Mutable view of one parameter vector. Touching binary shadow weights marks
/// the layer unsynced.
pub fn param_mut(net: &mut Network, key: ParamKey) -> Option<&mut [f32]> {
    if key.layer >= net.layers().len() {
        return None;
    }
    let kind = key.kind;
    match net.layer_mut(key.layer) {
        Layer::Conv { weight, bias, .. } | Layer::TransposedConv { weight, bias, .. } => match kind {
            ParamKind::Weight => Some(weight.data_mut()),
            ParamKind::Bias => bias.as_deref_mut(),
            _ => None,
        },
        Layer::BinaryConv(b) => match kind {
            ParamKind::Weight => Some(b.shadow_mut().data_mut()),
            ParamKind::Bias => b.bias_mut(),
            ParamKind::Alpha if b.mode() == AlphaMode::Learnable => Some(b.alpha_mut()),
            _ => None,
        },
        Layer::BatchNorm { gamma, beta, .. } => match kind {
            ParamKind::Gamma => gamma.as_deref_mut(),
            ParamKind::Beta => Some(beta),
            _ => None,
        },
        Layer::Act(Activation::PRelu(s)) if kind == ParamKind::Slope => Some(s),
        _ => None,
    }
}

/// Gradients keyed by parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientSet {
    grads: BTreeMap<ParamKey, Vec<f32>>,
}

impl GradientSet {
    pub fn new() -> Self {
        GradientSet::default()
    }

    pub fn get(&self, key: ParamKey) -> Option<&[f32]> {
        self.grads.get(&key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: ParamKey, grad: Vec<f32>) {
        self.grads.insert(key, grad);
    }

    /// Adds `grad` into the entry for `key`, creating it if absent.
    pub fn accumulate(&mut self, key: ParamKey, grad: &[f32]) {
        match self.grads.get_mut(&key) {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, b)| *a += b),
            None => {
                self.grads.insert(key, grad.to_vec());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Vec<f32>)> {
        self.grads.iter()
    }
}

/// Forward sync of one binary layer.
pub fn forward_sync(layer: &mut BinaryConvLayer) {
    layer.sync();
}

/// Straight-through weight gradient of one filter: `clip(dC/dB / alpha)`.
/// For `alpha == 0` the gradient with respect to the effective weight,
/// `d_eff`, is clipped as-is, which is the `alpha -> 0` limit of the same
/// expression.
pub fn ste_filter_grad(dc_db: &[f32], d_eff: &[f32], alpha: f32, lo: f32, hi: f32, out: &mut [f32]) {
    if alpha == 0.0 {
        for (o, &d) in out.iter_mut().zip(d_eff) {
            *o = d.clamp(lo, hi);
        }
    } else {
        let inv = 1.0 / alpha;
        for (o, &d) in out.iter_mut().zip(dc_db) {
            *o = (inv * d).clamp(lo, hi);
        }
    }
}

/// Gradients of a binary convolution.
#[derive(Clone, Debug)]
pub struct BinaryGrads {
    /// Clipped straight-through gradient for the shadow weights.
    pub weights: Tensor,
    /// `sum(dC/d(alpha B)_f * B_f)` per output channel.
    pub alpha: Vec<f32>,
    pub bias: Vec<f32>,
    pub input: Option<Tensor>,
}

/// Backward pass of a synced binary convolution evaluated at `input`.
pub fn backward_binary_conv(
    layer: &BinaryConvLayer,
    input: &Tensor,
    grad_out: &Tensor,
    clip: (f32, f32),
) -> Result<BinaryGrads> {
    backward_binary_conv_with(layer, &layer.effective_weights(), input, grad_out, clip, true)
}

fn backward_binary_conv_with(
    layer: &BinaryConvLayer,
    effective: &Tensor,
    input: &Tensor,
    grad_out: &Tensor,
    clip: (f32, f32),
    want_input: bool,
) -> Result<BinaryGrads> {
    if !layer.is_synced() {
        return Err(Error::Unsynced(String::from("backward_binary_conv")));
    }
    let g = conv2d_backward_with(input, effective, grad_out, layer.spec(), want_input)?;
    let signs = layer.packed().unpack();
    let s = signs.shape();
    let mut gw = Tensor::zeros(s);
    let mut galpha = vec![0.0f32; s.n];
    let mut dc_db = vec![0.0f32; s.item()];
    for f in 0..s.n {
        let d_eff = g.weights.item(f);
        let b = signs.item(f);
        let a = layer.alpha()[f];
        for ((o, &d), &bv) in dc_db.iter_mut().zip(d_eff).zip(b) {
            *o = a * d;
            galpha[f] += d * bv;
        }
        ste_filter_grad(&dc_db, d_eff, a, clip.0, clip.1, gw.item_mut(f));
    }
    Ok(BinaryGrads {
        weights: gw,
        alpha: galpha,
        bias: g.bias,
        input: g.input,
    })
}

enum Cache {
    None,
    Norm(BatchNormCache),
}

/// Values and intermediates of a training-mode forward pass.
pub struct Tape {
    values: Vec<Tensor>,
    caches: Vec<Cache>,
    effective: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node]
    }
}

/// Training-mode forward pass. Every binary layer must be synced; batch norm
/// uses batch statistics and updates its running statistics.
pub fn forward_train(net: &mut Network, input: &Tensor) -> Result<Tape> {
    let mut effective: Vec<Option<Tensor>> = vec![None; net.layers().len()];
    for (id, b) in net.binary_layers() {
        if !b.is_synced() {
            return Err(Error::Unsynced(net.layers()[id].name.clone()));
        }
        effective[id] = Some(b.effective_weights());
    }
    let nodes: Vec<_> = net.nodes().to_vec();
    let mut values: Vec<Tensor> = Vec::with_capacity(nodes.len());
    let mut caches = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let (v, cache) = match node.op {
            Op::Input => (input.clone(), Cache::None),
            Op::Add { lhs, rhs } => (values[lhs].add(&values[rhs])?, Cache::None),
            Op::Apply { layer, input } => {
                let x = &values[input];
                match net.layer_mut(layer) {
                    Layer::Conv { spec, weight, bias } => (conv2d(x, weight, bias.as_deref(), spec)?, Cache::None),
                    Layer::BinaryConv(b) => {
                        let w = effective[layer].as_ref().expect("binary layer weights");
                        (conv2d(x, w, b.bias(), b.spec())?, Cache::None)
                    }
                    Layer::TransposedConv { spec, weight, bias } => {
                        (transposed_conv2d(x, weight, bias.as_deref(), spec)?, Cache::None)
                    }
                    Layer::BatchNorm { gamma, beta, stats } => {
                        let (y, c) = batch_norm_train(x, gamma.as_deref(), beta, stats, BN_EPSILON, BN_MOMENTUM)?;
                        (y, Cache::Norm(c))
                    }
                    Layer::Act(a) => (activation(x, a)?, Cache::None),
                    Layer::PixelShuffle(r) => (pixel_shuffle(x, *r)?, Cache::None),
                }
            }
        };
        values.push(v);
        caches.push(cache);
    }
    Ok(Tape {
        values,
        caches,
        effective,
    })
}

fn add_grad(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse pass over a tape. `seeds` holds the loss gradient at each output
/// node. Returns the parameter gradients and the gradient at the input.
pub fn backward(
    net: &Network,
    tape: &Tape,
    seeds: &[(NodeId, Tensor)],
    clip: (f32, f32),
) -> Result<(GradientSet, Tensor)> {
    let nodes = net.nodes();
    let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
    for (node, g) in seeds {
        if g.shape() != tape.values[*node].shape() {
            return Err(shape_err("backward", format!("seed {} for node of shape {}", g.shape(), tape.values[*node].shape())));
        }
        add_grad(&mut grads[*node], g.clone())?;
    }
    let mut out = GradientSet::new();
    for (i, node) in nodes.iter().enumerate().rev() {
        let Some(g) = grads[i].take() else { continue };
        match node.op {
            Op::Input => {
                grads[i] = Some(g);
            }
            Op::Add { lhs, rhs } => {
                add_grad(&mut grads[lhs], g.clone())?;
                add_grad(&mut grads[rhs], g)?;
            }
            Op::Apply { layer, input } => {
                let x = &tape.values[input];
                let key = |kind| ParamKey::new(layer, kind);
                let gx = match net.layer(layer) {
                    Layer::Conv { spec, weight, bias } => {
                        let cg = conv2d_backward_with(x, weight, &g, spec, true)?;
                        out.accumulate(key(ParamKind::Weight), cg.weights.data());
                        if bias.is_some() {
                            out.accumulate(key(ParamKind::Bias), &cg.bias);
                        }
                        cg.input.expect("input gradient requested")
                    }
                    Layer::BinaryConv(b) => {
                        let w = tape.effective[layer].as_ref().expect("binary layer weights");
                        let bg = backward_binary_conv_with(b, w, x, &g, clip, true)?;
                        out.accumulate(key(ParamKind::Weight), bg.weights.data());
                        if b.bias().is_some() {
                            out.accumulate(key(ParamKind::Bias), &bg.bias);
                        }
                        if b.mode() == AlphaMode::Learnable {
                            out.accumulate(key(ParamKind::Alpha), &bg.alpha);
                        }
                        bg.input.expect("input gradient requested")
                    }
                    Layer::TransposedConv { spec, weight, bias } => {
                        let cg = transposed_conv2d_backward(x, weight, &g, spec)?;
                        out.accumulate(key(ParamKind::Weight), cg.weights.data());
                        if bias.is_some() {
                            out.accumulate(key(ParamKind::Bias), &cg.bias);
                        }
                        cg.input.expect("transposed conv input gradient")
                    }
                    Layer::BatchNorm { gamma, .. } => {
                        let Cache::Norm(cache) = &tape.caches[i] else {
                            return Err(Error::InvalidArgument(String::from("batch norm node without cache")));
                        };
                        let (dx, dgamma, dbeta) = batch_norm_backward(&g, gamma.as_deref(), cache)?;
                        if let Some(dg) = dgamma {
                            out.accumulate(key(ParamKind::Gamma), &dg);
                        }
                        out.accumulate(key(ParamKind::Beta), &dbeta);
                        dx
                    }
                    Layer::Act(a) => {
                        let (dx, dslope) = activation_backward(x, &g, a)?;
                        if let Some(ds) = dslope {
                            out.accumulate(key(ParamKind::Slope), &ds);
                        }
                        dx
                    }
                    Layer::PixelShuffle(r) => pixel_unshuffle(&g, *r)?,
                };
                add_grad(&mut grads[input], gx)?;
            }
        }
    }
    let input_grad = grads[Network::INPUT].take().unwrap_or_else(|| Tensor::zeros(tape.values[0].shape()));
    Ok((out, input_grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    /// `v = momentum * v + g; p -= lr * v`.
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32, epsilon: f32 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment buffers.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    step: u32,
    first: BTreeMap<ParamKey, Vec<f32>>,
    second: BTreeMap<ParamKey, Vec<f32>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        OptimizerState::default()
    }

    pub fn steps(&self) -> u32 {
        self.step
    }
}

/// Applies one optimizer step to every trainable parameter. Shadow weights are
/// updated like any other tensor; their signs are re-read at the next sync.
pub fn update_step(
    net: &mut Network,
    grads: &GradientSet,
    lr: f64,
    optimizer: &Optimizer,
    state: &mut OptimizerState,
) -> Result<()> {
    let params = trainable_params(net);
    for (key, len) in &params {
        match grads.get(*key) {
            Some(g) if g.len() == *len => {}
            Some(g) => return Err(shape_err("update_step", format!("gradient for {key} has {} entries, expected {len}", g.len()))),
            None => return Err(Error::MissingGradient(*key)),
        }
    }
    state.step += 1;
    let lr = lr as f32;
    for (key, len) in params {
        let g = grads.get(key).expect("checked above");
        let p = param_mut(net, key).expect("trainable parameter");
        match *optimizer {
            Optimizer::Sgd { momentum } => {
                if momentum == 0.0 {
                    p.iter_mut().zip(g).for_each(|(w, &d)| *w -= lr * d);
                } else {
                    let v = state.first.entry(key).or_insert_with(|| vec![0.0; len]);
                    for ((w, &d), m) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *m = momentum * *m + d;
                        *w -= lr * *m;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - powi(beta1 as f64, state.step) as f32;
                let c2 = 1.0 - powi(beta2 as f64, state.step) as f32;
                let m = state.first.entry(key).or_insert_with(|| vec![0.0; len]);
                let v = state.second.entry(key).or_insert_with(|| vec![0.0; len]);
                for (((w, &d), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *v = beta2 * *v + (1.0 - beta2) * d * d;
                    *w -= lr * (*m / c1) / (sqrtf(*v / c2) + epsilon);
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Loss {
    Mse,
    /// `mean(sqrt(d^2 + eps^2))`.
    Charbonnier(f32),
}

/// Loss value (accumulated in f64) and its gradient with respect to `pred`.
pub fn loss(pred: &Tensor, target: &Tensor, kind: Loss) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(shape_err("loss", format!("{} vs {}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("loss"));
    }
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0f64;
    match kind {
        Loss::Mse => {
            let k = (2.0 / n) as f32;
            for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
                let d = p - t;
                total += d as f64 * d as f64;
                *g = k * d;
            }
        }
        Loss::Charbonnier(eps) => {
            let e2 = eps as f64 * eps as f64;
            for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
                let d = (p - t) as f64;
                let r = crate::math::sqrt(d * d + e2);
                total += r;
                *g = (d / r / n) as f32;
            }
        }
    }
    Ok((total / n, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_interval_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub clip_lo: f32,
    pub clip_hi: f32,
    pub loss: Loss,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// HR patch side; the LR patch is `patch / scale`.
    pub patch: usize,
    pub noise_std: f32,
    /// Clamp shadow weights to `[-1, 1]` after each update.
    pub clamp_shadow: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            decay_factor: 0.9,
            decay_interval_epochs: 20,
            batch_size: 16,
            epochs: 1,
            iterations_per_epoch: 50,
            clip_lo: -5.0,
            clip_hi: 5.0,
            loss: Loss::Mse,
            seed: 0,
            optimizer: Optimizer::default(),
            patch: 32,
            noise_std: NOISE_STD,
            clamp_shadow: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(String::from(m)));
        if !(self.clip_lo < self.clip_hi) {
            return bad("clip_lo must be below clip_hi");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must lie in (0, 1]");
        }
        if self.decay_interval_epochs == 0 {
            return bad("decay_interval_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        Ok(())
    }
}

/// `decay_factor ^ floor(epoch / decay_interval_epochs)`.
pub fn decay_multiplier(epoch: usize, cfg: &TrainConfig) -> f64 {
    powi(cfg.decay_factor, (epoch / cfg.decay_interval_epochs) as u32)
}

/// Step-decayed learning rate for `epoch`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.initial_lr * decay_multiplier(epoch, cfg)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
    /// Fraction of packed weight bits that changed during the epoch.
    pub bit_flip_fraction: Option<f64>,
}

pub type TrainingLog = Vec<EpochRecord>;

/// HR training images plus an optional held-out set of `(lr, hr)` pairs.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub images: &'a [Tensor],
    pub validation: &'a [(Tensor, Tensor)],
}

/// Mean PSNR-Y of the model over `(lr, hr)` pairs.
pub fn evaluate_psnr(model: &SrModel, pairs: &[(Tensor, Tensor)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluate_psnr"));
    }
    let mut total = 0.0;
    for (lr, hr) in pairs {
        let sr = model.forward(lr)?.clamp(0.0, 1.0);
        total += psnr_y(&sr, hr)?;
    }
    Ok(total / pairs.len() as f64)
}

fn packed_snapshot(net: &Network) -> Vec<crate::binary::PackedBits> {
    net.binary_layers().map(|(_, b)| b.packed().clone()).collect()
}

fn flip_fraction(before: &[crate::binary::PackedBits], net: &Network) -> Option<f64> {
    if before.is_empty() {
        return None;
    }
    let (mut flipped, mut total) = (0usize, 0usize);
    for (old, (_, b)) in before.iter().zip(net.binary_layers()) {
        flipped += old.hamming(b.packed());
        total += old.total_bits();
    }
    Some(flipped as f64 / total as f64)
}

/// Per-level training targets: the HR batch for the last output, bicubic
/// downscales of it for coarser pyramid levels.
fn level_targets(hr: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    let mut targets = vec![hr.clone()];
    for _ in 1..levels {
        let prev = targets.last().expect("non-empty");
        targets.push(bicubic_resize(prev, ResizeFactor::Down2)?);
    }
    targets.reverse();
    Ok(targets)
}

/// One optimization step on a batch; returns the loss.
pub fn train_step(
    model: &mut SrModel,
    lr_batch: &Tensor,
    hr_batch: &Tensor,
    cfg: &TrainConfig,
    lr: f64,
    state: &mut OptimizerState,
) -> Result<f64> {
    model.sync();
    let outputs: Vec<NodeId> = model.network().outputs().to_vec();
    let targets = level_targets(hr_batch, outputs.len())?;
    let tape = forward_train(model.network_mut(), lr_batch)?;
    let mut total = 0.0;
    let mut seeds = Vec::with_capacity(outputs.len());
    for (&node, target) in outputs.iter().zip(&targets) {
        let (l, g) = loss(tape.value(node), target, cfg.loss)?;
        total += l;
        seeds.push((node, g));
    }
    let (grads, _) = backward(model.network(), &tape, &seeds, (cfg.clip_lo, cfg.clip_hi))?;
    drop(tape);
    update_step(model.network_mut(), &grads, lr, &cfg.optimizer, state)?;
    if cfg.clamp_shadow {
        let ids: Vec<_> = model.network().binary_layers().map(|(id, _)| id).collect();
        for id in ids {
            if let Some(w) = param_mut(model.network_mut(), ParamKey::new(id, ParamKind::Weight)) {
                w.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
            }
        }
    }
    Ok(total)
}

/// Runs `epochs x iterations_per_epoch` steps on randomly sampled, augmented
/// patches. All randomness comes from `cfg.seed`. Ends with a forward sync.
pub fn train(model: &mut SrModel, data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainingLog> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    model: &mut SrModel,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingLog> {
    cfg.validate()?;
    let mut log = TrainingLog::new();
    if cfg.epochs == 0 {
        return Ok(log);
    }
    if data.images.is_empty() {
        return Err(Error::Empty("training images"));
    }
    let scale = model.config().scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new();
    model.sync();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let before = packed_snapshot(model.network());
        let mut epoch_loss = 0.0;
        for iteration in 0..cfg.iterations_per_epoch {
            let mut lrs = Vec::with_capacity(cfg.batch_size);
            let mut hrs = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let img = &data.images[rng.random_range(0..data.images.len())];
                let pair = sample_and_augment_with(img, cfg.patch, scale, cfg.noise_std, &mut rng)?;
                lrs.push(pair.lr);
                hrs.push(pair.hr);
            }
            let l = train_step(model, &Tensor::stack(&lrs)?, &Tensor::stack(&hrs)?, cfg, lr, &mut state)?;
            if !l.is_finite() {
                return Err(Error::Diverged { epoch, iteration, loss: l });
            }
            epoch_loss += l;
        }
        model.sync();
        let val_psnr = if data.validation.is_empty() {
            None
        } else {
            Some(evaluate_psnr(model, data.validation)?)
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: epoch_loss / cfg.iterations_per_epoch.max(1) as f64,
            val_psnr,
            bit_flip_fraction: flip_fraction(&before, model.network()),
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::ConvSpec;
    use crate::tensor::Shape;

    #[test]
    fn clip_example() {
        let mut out = [0.0f32];
        ste_filter_grad(&[4.0], &[8.0], 0.5, -5.0, 5.0, &mut out);
        assert_eq!(out, [5.0]);
        ste_filter_grad(&[-1.0], &[-2.0], 0.5, -5.0, 5.0, &mut out);
        assert_eq!(out, [-2.0]);
        ste_filter_grad(&[0.0], &[7.0], 0.0, -5.0, 5.0, &mut out);
        assert_eq!(out, [5.0]);
    }

    #[test]
    fn lr_schedule_steps() {
        let cfg = TrainConfig {
            initial_lr: 3e-4,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(0, &cfg), 3e-4);
        assert_eq!(lr_schedule(19, &cfg), 3e-4);
        assert!((lr_schedule(20, &cfg) - 2.7e-4).abs() < 1e-15);
        assert!((lr_schedule(40, &cfg) - 2.43e-4).abs() < 1e-15);
        assert_eq!(decay_multiplier(20, &cfg), 0.9);
        assert_eq!(decay_multiplier(40, &cfg), 0.81);
    }

    #[test]
    fn mse_examples() {
        let t = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let p = Tensor::filled(t.shape(), 0.1);
        let (l, _) = loss(&p, &t, Loss::Mse).unwrap();
        assert!((l - 0.01).abs() < 1e-9);
        let (l, g) = loss(&t, &t, Loss::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sgd_step() {
        let mut net = Network::new();
        let spec = ConvSpec::same(1, 1, 1);
        let id = net.push(
            "c",
            crate::graph::Region::Head,
            Layer::Conv {
                spec,
                weight: Tensor::filled(spec.weight_shape(), 1.0),
                bias: None,
            },
            Network::INPUT,
        );
        net.set_outputs(vec![id]);
        let mut grads = GradientSet::new();
        let key = ParamKey::new(0, ParamKind::Weight);
        let mut st = OptimizerState::new();
        assert_eq!(
            update_step(&mut net, &grads, 0.1, &Optimizer::Sgd { momentum: 0.0 }, &mut st),
            Err(Error::MissingGradient(key))
        );
        grads.insert(key, vec![2.0]);
        update_step(&mut net, &grads, 0.1, &Optimizer::Sgd { momentum: 0.0 }, &mut st).unwrap();
        assert!((param_mut(&mut net, key).unwrap()[0] - 0.8).abs() < 1e-7);
    }
}
