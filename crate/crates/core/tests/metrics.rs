use bsr_core::data::*;
use bsr_core::pyramid::*;
use bsr_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random_range(0.0..1.0))
}

#[test]
fn cubic_weights_partition_unity() {
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let sum: f64 = (-2..=2).map(|k| cubic(t - k as f64)).sum();
        assert!((sum - 1.0).abs() < 1e-6, "phase {t}");
    }
    assert_eq!(cubic(0.0), 1.0);
    assert_eq!(cubic(1.0), 0.0);
    assert_eq!(cubic(2.0), 0.0);
}

#[test]
fn upsampling_reproduces_ramps_away_from_borders() {
    // Cubic convolution reproduces linear functions exactly.
    let w = 16;
    let ramp = Tensor::from_fn(Shape::new(1, 1, 4, w), |_, _, _, x| 0.1 + 0.05 * x as f32);
    for (factor, s) in [(ResizeFactor::Up2, 2.0), (ResizeFactor::Up4, 4.0)] {
        let up = bicubic_resize(&ramp, factor).unwrap();
        let ow = up.shape().w;
        for x in (2 * s as usize)..ow - 2 * s as usize {
            let src = (x as f64 + 0.5) / s - 0.5;
            let expected = 0.1 + 0.05 * src;
            assert!((up.at(0, 0, 1, x) as f64 - expected).abs() < 1e-5, "x={x}");
        }
    }
}

#[test]
fn resize_keeps_constants_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let c = Tensor::filled(Shape::new(1, 3, 8, 12), 0.37);
    for f in [ResizeFactor::Up2, ResizeFactor::Up4, ResizeFactor::Down2, ResizeFactor::Down4] {
        let r = bicubic_resize(&c, f).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
        let img = random_image(8, 12, &mut rng);
        assert!(bicubic_resize(&img, f).unwrap().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(bicubic_resize(&Tensor::zeros(Shape::new(1, 3, 6, 7)), ResizeFactor::Down2).is_err());
}

#[test]
fn psnr_examples() {
    let a = Tensor::filled(Shape::new(1, 3, 4, 4), 0.5);
    assert_eq!(psnr_y(&a, &a).unwrap(), PSNR_CAP);
    let b = a.add_scalar(0.1);
    assert!((psnr_y(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    assert!(psnr_y(&a, &Tensor::zeros(Shape::new(1, 3, 4, 5))).is_err());
}

#[test]
fn ssim_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let a = random_image(16, 16, &mut rng);
    assert!((ssim_y(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    let checker = Tensor::from_fn(Shape::new(1, 3, 16, 16), |_, _, h, w| ((h / 2 + w / 2) % 2) as f32);
    assert!(ssim_y(&checker, &checker.map(|v| 1.0 - v)).unwrap() < 0.1);
    for _ in 0..100 {
        let (x, y) = (random_image(12, 12, &mut rng), random_image(12, 12, &mut rng));
        let s = ssim_y(&x, &y).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert!((s - ssim_y(&y, &x).unwrap()).abs() < 1e-12);
    }
    assert!(ssim_y(&random_image(10, 12, &mut rng), &random_image(10, 12, &mut rng)).is_err());
}

#[test]
fn report_means_are_arithmetic_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut r = MetricsReport::default();
    for i in 0..4 {
        let hr = random_image(12, 12, &mut rng);
        let sr = hr.map(|v| (v + 0.02 * i as f32).min(1.0));
        r.push(format!("img{i}"), &sr, &hr).unwrap();
    }
    assert_eq!(r.rows.len(), 4);
    let p: f64 = r.rows.iter().map(|x| x.psnr_y).sum::<f64>() / 4.0;
    let s: f64 = r.rows.iter().map(|x| x.ssim_y).sum::<f64>() / 4.0;
    assert!((r.mean_psnr() - p).abs() < 1e-12 && (r.mean_ssim() - s).abs() < 1e-12);
}

#[test]
fn augmentation_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let img = random_image(20, 24, &mut rng);
    let a = sample_and_augment(&img, 8, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = sample_and_augment(&img, 8, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    for scale in [2, 4] {
        for _ in 0..20 {
            let p = sample_and_augment(&img, 16, scale, &mut rng).unwrap();
            assert_eq!(p.lr.shape(), Shape::new(1, 3, 16 / scale, 16 / scale));
            assert_eq!(p.hr.shape(), Shape::new(1, 3, 16, 16));
            assert!(p.hr.data().iter().chain(p.lr.data()).all(|v| (0.0..=1.0).contains(v)));
        }
    }
    // Without noise the LR patch is exactly the downscaled HR patch.
    let p = sample_and_augment_with(&img, 8, 2, 0.0, &mut rng).unwrap();
    assert_eq!(p.lr, bicubic_resize(&p.hr, ResizeFactor::Down2).unwrap());
    assert!(sample_and_augment(&img, 7, 2, &mut rng).is_err());
    assert!(sample_and_augment(&img, 32, 2, &mut rng).is_err());
}

#[test]
fn rotations_compose() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let img = random_image(5, 7, &mut rng);
    assert_eq!(rotate90(&rotate90(&img, 2), 2), img);
    assert_eq!(rotate90(&rotate90(&img, 1), 3), img);
    assert_eq!(rotate90(&img, 1).shape(), Shape::new(1, 3, 7, 5));
    assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    assert_eq!(flip_vertical(&flip_vertical(&img)), img);
}

#[test]
fn impulse_energy_stays_in_kernel_footprint() {
    let mut img = Tensor::zeros(Shape::new(1, 1, 32, 32));
    img.set(0, 0, 16, 16, 1.0);
    let p = build_laplacian(&img, 1).unwrap();
    let g = &p.gradients[0];
    let (mut inside, mut total) = (0.0f64, 0.0f64);
    for y in 0..32 {
        for x in 0..32 {
            let e = (g.at(0, 0, y, x) as f64).powi(2);
            total += e;
            // Reduce and expand each spread a value by at most 2 pixels at full resolution.
            if y.abs_diff(16) <= 4 && x.abs_diff(16) <= 4 {
                inside += e;
            }
        }
    }
    assert!(total > 0.0);
    assert!(inside / total > 1.0 - 1e-9);
}

#[test]
fn pyramid_stats_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    // Smooth images with a little texture.
    let images: Vec<Tensor> = (0..3)
        .map(|i| {
            let phase = i as f32;
            Tensor::from_fn(Shape::new(1, 3, 30, 34), |_, c, h, w| {
                let base = 0.5 + 0.3 * ((h as f32 * 0.2 + phase).sin() * (w as f32 * 0.15 + c as f32).cos());
                (base + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0)
            })
        })
        .collect();
    let stats = PyramidStats::from_images(&images, 3, 21).unwrap();
    assert_eq!(stats.levels, 3);
    let mut last = 0.0;
    for tau in [0.001, 0.01, 0.05, 0.1, 0.5, 1.0] {
        let summary = sparsity_summary(&stats, tau).unwrap();
        for s in &summary {
            assert!((0.0..=1.0).contains(&s.fraction_near_zero));
        }
        assert!(summary[0].fraction_near_zero >= last);
        last = summary[0].fraction_near_zero;
    }
    for h in &stats.histograms {
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let c = stats.center_bin();
        assert!(h.iter().enumerate().all(|(i, &m)| i == c || m < h[c]));
    }
    assert!(sparsity_summary(&stats, 0.0).is_err());
    assert!(build_laplacian(&Tensor::zeros(Shape::new(1, 1, 8, 8)), 4).is_err());
}

proptest! {
    #[test]
    fn collapse_inverts_build(seed in any::<u64>(), levels in 1usize..4, h in 1usize..5, w in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(h << levels, w << levels, &mut rng);
        let p = build_laplacian(&img, levels).unwrap();
        prop_assert!(collapse(&p).unwrap().max_abs_diff(&img).unwrap() <= 1e-6);
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_image(6, 5, &mut rng), random_image(6, 5, &mut rng));
        prop_assert_eq!(psnr_y(&a, &b).unwrap(), psnr_y(&b, &a).unwrap());
    }
}
