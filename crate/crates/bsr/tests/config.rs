use bsr::commands::{ConfigSource, Overrides};
use bsr::config::*;
use bsr_core::train::lr_schedule;
use bsr_core::{AlphaMode, Family};

#[test]
fn every_preset_resolves() {
    for name in PRESETS {
        let cfg = RunConfig::preset(name).unwrap();
        cfg.model_config().unwrap();
        cfg.train_config().unwrap();
    }
    assert!(matches!(RunConfig::preset("nope"), Err(bsr::error::CliError::Config(_))));
}

#[test]
fn binary_presets_use_larger_learning_rates() {
    let bin = RunConfig::preset("resnet-bin-4x").unwrap();
    let real = RunConfig::preset("resnet-real-4x").unwrap();
    assert_eq!(bin.train.lr, 3e-4);
    assert_eq!(real.train.lr, 1e-4);
    for (b, r) in [("resnet-bin-2x", "resnet-real-2x"), ("lapsrn-bin-4x", "lapsrn-real-4x")] {
        let ratio = RunConfig::preset(b).unwrap().train.lr / RunConfig::preset(r).unwrap().train.lr;
        assert!(ratio > 3.0 - 1e-9 && ratio < 4.0 + 1e-9, "{b}: {ratio}");
    }
    assert!(bin.model.binarize && !real.model.binarize);
}

#[test]
fn resnet_schedule_decays_every_twenty_epochs() {
    let t = RunConfig::preset("resnet-bin-4x").unwrap().train_config().unwrap();
    assert_eq!(lr_schedule(19, &t), 3e-4);
    assert_eq!(lr_schedule(20, &t), 3e-4 * 0.9);
    assert_eq!(lr_schedule(45, &t), 3e-4 * 0.81);
}

#[test]
fn toml_round_trip() {
    for name in PRESETS {
        let cfg = RunConfig::preset(name).unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn bad_toml_is_a_config_error() {
    let mut text = RunConfig::preset("desk").unwrap().to_toml();
    assert!(RunConfig::from_toml("[model]\nscale = 2\n").is_err());
    text.push_str("\n[extra]\nkey = 1\n");
    assert!(RunConfig::from_toml(&text).is_err());
    let mut cfg = RunConfig::preset("desk").unwrap();
    cfg.model.scale = 3;
    assert!(cfg.model_config().is_err());
    let mut cfg = RunConfig::preset("desk").unwrap();
    cfg.train.patch = 33;
    assert!(cfg.train_config().is_err());
}

#[test]
fn overrides_apply_on_top_of_presets() {
    let o = Overrides {
        seed: Some(7),
        epochs: Some(0),
        scale: Some(4),
        blocks: Some(8),
        alpha_mode: Some(AlphaName::Deterministic),
        binarize: Some(false),
    };
    let cfg = ConfigSource::preset("resnet-bin-2x").resolve(&o).unwrap();
    let m = cfg.model_config().unwrap();
    assert_eq!((m.scale, m.num_residual_blocks, m.binarize_residual), (4, 8, false));
    assert_eq!(m.alpha_mode, AlphaMode::Deterministic);
    assert_eq!(m.family, Family::ResnetSr);
    assert_eq!((cfg.train.seed, cfg.train.epochs), (7, 0));
}

#[test]
fn config_source_requires_exactly_one_origin() {
    assert!(ConfigSource::default().resolve(&Overrides::default()).is_err());
    let both = ConfigSource {
        config: Some("x.toml".into()),
        preset: Some("desk".into()),
    };
    assert!(both.resolve(&Overrides::default()).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, RunConfig::preset("lapsrn-bin-4x").unwrap().to_toml()).unwrap();
    let cfg = ConfigSource::file(&path).resolve(&Overrides::default()).unwrap();
    assert_eq!(cfg, RunConfig::preset("lapsrn-bin-4x").unwrap());
}
