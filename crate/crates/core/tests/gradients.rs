//! Finite-difference checks of every backward pass.

use bsr_core::graph::{BinaryPath, Layer, Network, Region};
use bsr_core::ops::*;
use bsr_core::train::*;
use bsr_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, rng: &mut ChaCha8Rng, scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-scale..scale))
}

/// `||a - b|| / max(||a||, ||b||)`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Like [`rel_err`] but with a floor on the normaliser, for gradients that are
/// exactly zero in theory (batch norm cancels per-channel shifts and scales).
fn floored_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(floor)
}

/// Central differences of `f` over every coordinate of `x`.
fn numeric_grad(x: &[f32], h: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * (h as f64))
        })
        .collect()
}

fn as_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Weighted sum `sum(w * y)`, whose gradient with respect to `y` is `w`.
fn probe_loss(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in [ConvSpec::same(2, 3, 3), ConvSpec::new(2, 3, 3, 2, 1), ConvSpec::new(3, 2, 1, 1, 0)] {
        let x = random(Shape::new(2, spec.in_channels, 5, 6), &mut rng, 1.0);
        let w = random(spec.weight_shape(), &mut rng, 0.5);
        let b = vec![0.1; spec.out_channels];
        let y = conv2d(&x, &w, Some(&b), &spec).unwrap();
        let probe = random(y.shape(), &mut rng, 1.0);
        let g = conv2d_backward(&x, &w, &probe, &spec).unwrap();
        let num_x = numeric_grad(x.data(), 1e-2, |d| {
            probe_loss(&conv2d(&Tensor::from_vec(x.shape(), d.to_vec()).unwrap(), &w, Some(&b), &spec).unwrap(), &probe)
        });
        assert!(rel_err(&num_x, &as_f64(g.input.unwrap().data())) < 1e-3);
        let num_w = numeric_grad(w.data(), 1e-2, |d| {
            probe_loss(&conv2d(&x, &Tensor::from_vec(w.shape(), d.to_vec()).unwrap(), Some(&b), &spec).unwrap(), &probe)
        });
        assert!(rel_err(&num_w, &as_f64(g.weights.data())) < 1e-3);
        let num_b = numeric_grad(&b, 1e-2, |d| probe_loss(&conv2d(&x, &w, Some(d), &spec).unwrap(), &probe));
        assert!(rel_err(&num_b, &as_f64(&g.bias)) < 1e-3);
    }
}

#[test]
fn transposed_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = ConvSpec::new(2, 3, 4, 2, 1);
    let x = random(Shape::new(1, 2, 3, 4), &mut rng, 1.0);
    let w = random(spec.transposed_weight_shape(), &mut rng, 0.5);
    let y = transposed_conv2d(&x, &w, None, &spec).unwrap();
    let probe = random(y.shape(), &mut rng, 1.0);
    let g = transposed_conv2d_backward(&x, &w, &probe, &spec).unwrap();
    let num_x = numeric_grad(x.data(), 1e-2, |d| {
        probe_loss(&transposed_conv2d(&Tensor::from_vec(x.shape(), d.to_vec()).unwrap(), &w, None, &spec).unwrap(), &probe)
    });
    assert!(rel_err(&num_x, &as_f64(g.input.unwrap().data())) < 1e-3);
    let num_w = numeric_grad(w.data(), 1e-2, |d| {
        probe_loss(&transposed_conv2d(&x, &Tensor::from_vec(w.shape(), d.to_vec()).unwrap(), None, &spec).unwrap(), &probe)
    });
    assert!(rel_err(&num_w, &as_f64(g.weights.data())) < 1e-3);
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(Shape::new(3, 2, 3, 3), &mut rng, 1.0);
    let gamma = vec![1.5, 0.7];
    let beta = vec![0.2, -0.1];
    let run = |x: &Tensor, g: &[f32], b: &[f32]| {
        let mut stats = RunningStats::new(2);
        batch_norm_train(x, Some(g), b, &mut stats, 1e-5, 0.9).unwrap()
    };
    let (y, cache) = run(&x, &gamma, &beta);
    let probe = random(y.shape(), &mut rng, 1.0);
    let (dx, dg, db) = batch_norm_backward(&probe, Some(&gamma), &cache).unwrap();
    let num_x = numeric_grad(x.data(), 1e-2, |d| probe_loss(&run(&Tensor::from_vec(x.shape(), d.to_vec()).unwrap(), &gamma, &beta).0, &probe));
    assert!(rel_err(&num_x, &as_f64(dx.data())) < 1e-3);
    let num_g = numeric_grad(&gamma, 1e-2, |d| probe_loss(&run(&x, d, &beta).0, &probe));
    assert!(rel_err(&num_g, &as_f64(&dg.unwrap())) < 1e-3);
    let num_b = numeric_grad(&beta, 1e-2, |d| probe_loss(&run(&x, &gamma, d).0, &probe));
    assert!(rel_err(&num_b, &as_f64(&db)) < 1e-3);
}

#[test]
fn activation_and_shuffle_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(Shape::new(2, 4, 3, 3), &mut rng, 1.0);
    let slopes = vec![0.1, 0.2, 0.3, 0.4];
    let probe = random(x.shape(), &mut rng, 1.0);
    let (dx, ds) = activation_backward(&x, &probe, &Activation::PRelu(slopes.clone())).unwrap();
    let num_x = numeric_grad(x.data(), 1e-3, |d| {
        probe_loss(&activation(&Tensor::from_vec(x.shape(), d.to_vec()).unwrap(), &Activation::PRelu(slopes.clone())).unwrap(), &probe)
    });
    assert!(rel_err(&num_x, &as_f64(dx.data())) < 1e-3);
    let num_s = numeric_grad(&slopes, 1e-2, |d| probe_loss(&activation(&x, &Activation::PRelu(d.to_vec())).unwrap(), &probe));
    assert!(rel_err(&num_s, &as_f64(&ds.unwrap())) < 1e-3);

    let y = pixel_shuffle(&x, 2).unwrap();
    let probe = random(y.shape(), &mut rng, 1.0);
    let back = pixel_unshuffle(&probe, 2).unwrap();
    let num = numeric_grad(x.data(), 1e-2, |d| probe_loss(&pixel_shuffle(&Tensor::from_vec(x.shape(), d.to_vec()).unwrap(), 2).unwrap(), &probe));
    assert!(rel_err(&num, &as_f64(back.data())) < 1e-6);
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random(Shape::new(1, 3, 4, 4), &mut rng, 1.0);
    let t = random(p.shape(), &mut rng, 1.0);
    for kind in [Loss::Mse, Loss::Charbonnier(1e-3)] {
        let (_, g) = loss(&p, &t, kind).unwrap();
        let num = numeric_grad(p.data(), 1e-3, |d| loss(&Tensor::from_vec(p.shape(), d.to_vec()).unwrap(), &t, kind).unwrap().0);
        assert!(rel_err(&num, &as_f64(g.data())) < 1e-4, "{kind:?}");
    }
}

fn binary_toy(rng: &mut ChaCha8Rng, batch_norm: bool) -> Network {
    let mut net = Network::new();
    let s1 = ConvSpec::same(3, 4, 3);
    let s2 = ConvSpec::same(4, 3, 3);
    let l1 = BinaryConvLayer::new(s1, random(s1.weight_shape(), rng, 1.0), Some(vec![0.05; 4]), AlphaMode::Learnable).unwrap();
    let l2 = BinaryConvLayer::new(s2, random(s2.weight_shape(), rng, 1.0), Some(vec![-0.02; 3]), AlphaMode::Learnable).unwrap();
    let mut x = net.push("c1", Region::ResidualBlock(0), Layer::BinaryConv(l1), Network::INPUT);
    if batch_norm {
        x = net.push(
            "bn",
            Region::ResidualBlock(0),
            Layer::BatchNorm { gamma: Some(vec![1.2; 4]), beta: vec![0.1; 4], stats: RunningStats::new(4) },
            x,
        );
    }
    x = net.push("act", Region::ResidualBlock(0), Layer::Act(Activation::LeakyRelu(0.2)), x);
    let y = net.push("c2", Region::ResidualBlock(0), Layer::BinaryConv(l2), x);
    let out = net.add(Network::INPUT, y, Region::ResidualBlock(0));
    net.set_outputs(vec![out]);
    net
}

/// Loss of the network with frozen signs, evaluated through the taped path.
fn tape_loss(net: &Network, x: &Tensor, target: &Tensor) -> f64 {
    let mut n = net.clone();
    let tape = forward_train(&mut n, x).unwrap();
    loss(tape.value(*net.outputs().last().unwrap()), target, Loss::Mse).unwrap().0
}

#[test]
fn binary_alpha_and_input_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for batch_norm in [false, true] {
        let net = binary_toy(&mut rng, batch_norm);
        let x = random(Shape::new(2, 3, 5, 5), &mut rng, 1.0);
        let target = random(x.shape(), &mut rng, 1.0);
        let mut work = net.clone();
        let tape = forward_train(&mut work, &x).unwrap();
        let out = *net.outputs().last().unwrap();
        let (_, g) = loss(tape.value(out), &target, Loss::Mse).unwrap();
        let (grads, gx) = backward(&net, &tape, &[(out, g)], (-5.0, 5.0)).unwrap();

        // Batch statistics amplify f32 round-off in the loss, so that variant gets more slack.
        let (h, tol) = (1e-3, if batch_norm { 3e-3 } else { 1e-3 });
        let num_x = numeric_grad(x.data(), h, |d| tape_loss(&net, &Tensor::from_vec(x.shape(), d.to_vec()).unwrap(), &target));
        assert!(rel_err(&num_x, &as_f64(gx.data())) < tol, "input gradient, bn={batch_norm}");

        for (id, b) in net.binary_layers() {
            let analytic = grads.get(ParamKey::new(id, ParamKind::Alpha)).unwrap();
            let num = numeric_grad(b.alpha(), h, |a| {
                let mut n = net.clone();
                if let Layer::BinaryConv(l) = n.layer_mut(id) {
                    l.alpha_mut().copy_from_slice(a);
                }
                tape_loss(&n, &x, &target)
            });
            let err = floored_err(&num, &as_f64(analytic), 1e-1);
            assert!(err < tol, "alpha of layer {id}, bn={batch_norm}: {err}");
        }
    }
}

#[test]
fn real_network_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = SrModel::build(SrModelConfig::resnet(2, 1).with_channels(4).with_binarize(false), 9).unwrap();
    // Shift batch-norm offsets away from zero so every path carries signal, and
    // enlarge weights so few pre-activations sit within a probe step of the kink.
    for slot in model.network_mut().layers_mut() {
        match &mut slot.layer {
            Layer::BatchNorm { beta, .. } => beta.iter_mut().for_each(|b| *b = 0.3),
            Layer::Conv { weight, .. } => *weight = weight.scale(3.0),
            _ => {}
        }
    }
    let net = model.network().clone();
    let x = random(Shape::new(2, 3, 4, 4), &mut rng, 1.0);
    let target = random(Shape::new(2, 3, 8, 8), &mut rng, 1.0);
    let mut work = net.clone();
    let tape = forward_train(&mut work, &x).unwrap();
    let out = *net.outputs().last().unwrap();
    let (_, g) = loss(tape.value(out), &target, Loss::Mse).unwrap();
    let (grads, _) = backward(&net, &tape, &[(out, g)], (-5.0, 5.0)).unwrap();
    for (key, _) in trainable_params(&net) {
        let analytic = grads.get(key).unwrap().to_vec();
        let base = param_mut(&mut net.clone(), key).unwrap().to_vec();
        let num = numeric_grad(&base, 1e-3, |p| {
            let mut n = net.clone();
            param_mut(&mut n, key).unwrap().copy_from_slice(p);
            tape_loss(&n, &x, &target)
        });
        let err = floored_err(&num, &as_f64(&analytic), 5e-2);
        assert!(err < 5e-3, "{key}: {err}");
    }
}

#[test]
fn shadow_gradients_are_clipped_and_scaled() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let spec = ConvSpec::same(3, 4, 3);
        let mut layer = BinaryConvLayer::new(spec, random(spec.weight_shape(), &mut rng, 1.0), None, AlphaMode::Learnable).unwrap();
        layer.alpha_mut().iter_mut().for_each(|a| *a = rng.random_range(-0.05..0.05));
        layer.alpha_mut()[0] = if trial % 2 == 0 { 0.0 } else { 0.01 };
        let x = random(Shape::new(2, 3, 6, 6), &mut rng, 10.0);
        let up = random(Shape::new(2, 4, 6, 6), &mut rng, 10.0);
        let g = backward_binary_conv(&layer, &x, &up, (-5.0, 5.0)).unwrap();
        assert!(g.weights.data().iter().all(|v| (-5.0..=5.0).contains(v)));
        let dense = conv2d_backward(&x, &layer.effective_weights(), &up, &spec).unwrap();
        for f in 0..4 {
            for (&gw, &d) in g.weights.item(f).iter().zip(dense.weights.item(f)) {
                let expected = d.clamp(-5.0, 5.0);
                assert!((gw - expected).abs() <= 1e-4 * (1.0 + d.abs()), "{gw} vs {expected}");
            }
        }
        let zero = backward_binary_conv(&layer, &x, &Tensor::zeros(up.shape()), (-5.0, 5.0)).unwrap();
        assert!(zero.weights.data().iter().chain(&zero.alpha).chain(zero.input.unwrap().data()).all(|&v| v == 0.0));
    }
}

#[test]
fn sync_then_forward_uses_effective_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.5, -1.5, 1.0, -1.0]).unwrap();
    let mut layer = BinaryConvLayer::new(ConvSpec::new(1, 1, 2, 1, 0), w, None, AlphaMode::Deterministic).unwrap();
    forward_sync(&mut layer);
    assert_eq!(layer.alpha(), &[1.0]);
    let mut learn = BinaryConvLayer::new(ConvSpec::same(2, 2, 3), random(Shape::new(2, 2, 3, 3), &mut rng, 1.0), None, AlphaMode::Learnable).unwrap();
    learn.alpha_mut()[1] = 0.123;
    let before = learn.alpha().to_vec();
    forward_sync(&mut learn);
    forward_sync(&mut learn);
    assert_eq!(learn.alpha(), &before[..]);
    let x = random(Shape::new(1, 2, 4, 4), &mut rng, 1.0);
    let mut net = Network::new();
    let o = net.push("b", Region::ResidualBlock(0), Layer::BinaryConv(learn.clone()), Network::INPUT);
    net.set_outputs(vec![o]);
    let dense = conv2d(&x, &learn.effective_weights(), None, learn.spec()).unwrap();
    let tape = forward_train(&mut net.clone(), &x).unwrap();
    assert_eq!(tape.value(o), &dense);
    assert!(net.forward(&x, BinaryPath::MulFree).unwrap().max_abs_diff(&dense).unwrap() < 1e-5);
}

