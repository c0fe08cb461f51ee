#![allow(dead_code)]

use std::path::PathBuf;

use bsr_core::model::ActKind;
use bsr_core::ops::Activation;
use bsr_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random_range(0.0..1.0))
}

fn fill(v: &mut [f32], rng: &mut ChaCha8Rng, lo: f32, hi: f32) {
    v.iter_mut().for_each(|x| *x = rng.random_range(lo..hi));
}

/// A small model of random shape with every stored value redrawn, so a
/// round trip through a file has something to lose.
pub fn random_model(seed: u64) -> SrModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = [2, 4][rng.random_range(0..2)];
    let blocks = rng.random_range(1..4);
    let mut cfg = if rng.random_bool(0.5) { SrModelConfig::resnet(scale, blocks) } else { SrModelConfig::pyramid(scale, blocks) };
    cfg = cfg
        .with_channels(rng.random_range(2..7) * 2)
        .with_binarize(rng.random_bool(0.8))
        .with_alpha_mode(if rng.random_bool(0.5) { AlphaMode::Learnable } else { AlphaMode::Deterministic });
    if cfg.family == Family::ResnetSr {
        cfg.use_batch_norm = rng.random_bool(0.7);
    }
    if rng.random_bool(0.5) {
        cfg.activation = ActKind::PRelu(0.25);
    }
    let mut m = SrModel::build(cfg, rng.random()).unwrap();
    for slot in m.network_mut().layers_mut() {
        match &mut slot.layer {
            Layer::Conv { weight, bias, .. } | Layer::TransposedConv { weight, bias, .. } => {
                fill(weight.data_mut(), &mut rng, -0.3, 0.3);
                if let Some(b) = bias {
                    fill(b, &mut rng, -0.1, 0.1);
                }
            }
            Layer::BinaryConv(l) => {
                fill(l.shadow_mut().data_mut(), &mut rng, -0.1, 0.1);
                fill(l.alpha_mut(), &mut rng, 0.0, 0.1);
                if let Some(b) = l.bias_mut() {
                    fill(b, &mut rng, -0.1, 0.1);
                }
            }
            Layer::BatchNorm { beta, stats, .. } => {
                fill(beta, &mut rng, -0.1, 0.1);
                fill(&mut stats.mean, &mut rng, -0.5, 0.5);
                fill(&mut stats.var, &mut rng, 0.5, 2.0);
            }
            Layer::Act(Activation::PRelu(slopes)) => fill(slopes, &mut rng, 0.0, 0.5),
            _ => {}
        }
    }
    m.sync();
    m
}
