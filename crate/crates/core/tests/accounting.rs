use bsr_core::cost::*;
use bsr_core::*;

fn resnet(scale: usize, blocks: usize, binarize: bool) -> SrModel {
    SrModel::build(SrModelConfig::resnet(scale, blocks).with_binarize(binarize), 0).unwrap()
}

fn speedup(scale: usize, blocks: usize, hw: (usize, usize)) -> f64 {
    let real = count_ops(&resnet(scale, blocks, false), hw).unwrap();
    let bin = count_ops(&resnet(scale, blocks, true), hw).unwrap();
    estimate_speedup(&real, &bin, &CostModel::default()).unwrap()
}

#[test]
fn size_report_follows_storage_formula() {
    let m = resnet(4, 16, true);
    let s = model_size(&m);
    assert_eq!(s.binary_param_bits, 1_179_648);
    assert_eq!(s.real_param_count, 344_771);
    assert_eq!(s.binary_model_bytes, 1_179_648 / 8 + 4 * 344_771);
    assert_eq!(s.real_model_bytes, 4 * 1_522_371);
    assert_eq!(format!("{:.3}", s.real_mb()), "6.089");
    // The all-real twin reports the same real-network size.
    assert_eq!(model_size(&resnet(4, 16, false)).real_model_bytes, s.real_model_bytes);
}

#[test]
fn real_network_sizes_per_configuration() {
    let rows = [
        (SrModelConfig::resnet(4, 16), "6.089"),
        (SrModelConfig::resnet(2, 16), "5.499"),
        (SrModelConfig::resnet(4, 8), "3.714"),
        (SrModelConfig::resnet(4, 24), "8.465"),
        (SrModelConfig::pyramid(4, 10), "2.083"),
    ];
    for (cfg, mb) in rows {
        assert_eq!(format!("{:.3}", model_size(&SrModel::build(cfg, 0).unwrap()).real_mb()), mb, "{cfg:?}");
    }
}

#[test]
fn totals_are_sums_of_entries() {
    let r = count_ops(&resnet(2, 4, true), (12, 10)).unwrap();
    let m: u64 = r.entries.iter().map(|e| e.mults).sum();
    let a: u64 = r.entries.iter().map(|e| e.adds).sum();
    let b: u64 = r.entries.iter().map(|e| e.bitops).sum();
    assert_eq!((r.mults(), r.adds(), r.bitops()), (m, a, b));
    assert!(r.residual_conv_mults() <= r.conv_mults());
}

#[test]
fn counts_scale_linearly_with_area() {
    for binarize in [true, false] {
        let m = resnet(4, 3, binarize);
        let small = count_ops(&m, (6, 5)).unwrap();
        let large = count_ops(&m, (18, 10)).unwrap();
        assert_eq!(large.mults(), 6 * small.mults());
        assert_eq!(large.adds(), 6 * small.adds());
        assert_eq!(large.bitops(), 6 * small.bitops());
    }
}

#[test]
fn binary_conv_entries_follow_counting_rule() {
    let r = count_ops(&resnet(2, 2, true), (8, 8)).unwrap();
    for e in r.entries.iter().filter(|e| e.kind == "binary_conv") {
        // 64 locations, 64 filters of 64 x 3 x 3 taps.
        assert_eq!(e.mults, 64 * 64);
        assert_eq!(e.adds, 64 * 64 * 64 * 9);
        assert_eq!(e.bitops, e.adds);
    }
    let real = count_ops(&resnet(2, 2, false), (8, 8)).unwrap();
    assert_eq!(real.bitops(), 0);
    assert_eq!(real.residual_conv_mults(), 4 * 64 * 64 * 64 * 9);
}

#[test]
fn residual_share_of_reference_model() {
    // 1200x800 output from a 300x200 input.
    let r = count_ops(&resnet(4, 16, false), (300, 200)).unwrap();
    let f = r.residual_conv_fraction();
    assert!((f - 0.6023).abs() < 1e-3, "{f}");
    assert!(count_ops(&resnet(2, 16, false), (600, 400)).unwrap().residual_conv_fraction() > f);
}

#[test]
fn speedup_orderings() {
    let hw = (30, 20);
    assert!(speedup(2, 16, (2 * hw.0, 2 * hw.1)) > speedup(4, 16, hw));
    assert!(speedup(4, 8, hw) < speedup(4, 16, hw));
    assert!(speedup(4, 16, hw) < speedup(4, 24, hw));
    assert!(speedup(4, 16, hw) > 1.0);
}

#[test]
fn speedup_bounded_by_mult_share() {
    // Replacing every multiplication by bit operations can at best remove the
    // multiplication cycles.
    let cm = CostModel::default();
    let real = count_ops(&resnet(4, 4, false), (10, 10)).unwrap();
    let mut all_bits = real.clone();
    for e in &mut all_bits.entries {
        e.bitops += e.mults;
        e.mults = 0;
    }
    let bound = cm.cycles(&real) / (cm.cycles(&real) - real.mults() as f64 / cm.flops_per_cycle);
    let s = estimate_speedup(&real, &all_bits, &cm).unwrap();
    assert!(s > 1.0 && s <= bound, "{s} {bound}");
    let bin = count_ops(&resnet(4, 4, true), (10, 10)).unwrap();
    assert!(estimate_speedup(&real, &bin, &cm).unwrap() <= bound);
}

#[test]
fn invalid_cost_model_rejected() {
    let r = count_ops(&resnet(2, 1, true), (4, 4)).unwrap();
    let cm = CostModel { flops_per_cycle: 0.0, ..CostModel::default() };
    assert!(estimate_speedup(&r, &r, &cm).is_err());
}
