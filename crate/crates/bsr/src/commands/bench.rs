use std::path::Path;

use bsr_core::cost::{count_ops, estimate_speedup, model_size, CostModel, OpReport};
use bsr_core::SrModel;
use serde::{Deserialize, Serialize};

use super::{ensure_dir, ConfigSource, Overrides};
use crate::error::CliError;
use crate::report::{write_csv, RunManifest};

/// Counts and storage for one variant of a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub binary_params: u64,
    pub real_params: u64,
    pub size_bytes: u64,
    pub size_mb: f64,
    pub mults: u64,
    pub adds: u64,
    pub bitops: u64,
    pub conv_mults: u64,
    pub residual_conv_fraction: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub output_hw: (usize, usize),
    pub real: BenchRow,
    pub binary: BenchRow,
    pub real_ops: OpReport,
    pub binary_ops: OpReport,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.binary.speedup
    }
}

#[derive(Serialize)]
struct OpRow<'a> {
    name: &'a str,
    kind: &'a str,
    region: String,
    mults: u64,
    adds: u64,
    bitops: u64,
}

pub const BENCH_FILE: &str = "bench.csv";

fn row(variant: &str, model: &SrModel, ops: &OpReport, speedup: f64) -> BenchRow {
    let size = model_size(model);
    let (binary_params, real_params) = model.count_parameters();
    let size_bytes = if variant == "binary" { size.binary_model_bytes } else { size.real_model_bytes };
    BenchRow {
        variant: variant.into(),
        binary_params: binary_params as u64,
        real_params: real_params as u64,
        size_bytes,
        size_mb: size_bytes as f64 / bsr_core::cost::BYTES_PER_MB,
        mults: ops.mults(),
        adds: ops.adds(),
        bitops: ops.bitops(),
        conv_mults: ops.conv_mults(),
        residual_conv_fraction: ops.residual_conv_fraction(),
        speedup,
    }
}

/// Op counts, sizes and the estimated speedup of the binarized config over
/// its all-real twin, for an `output_hw = (height, width)` output image.
pub fn cmd_bench(source: &ConfigSource, overrides: &Overrides, output_hw: (usize, usize), out_dir: Option<&Path>) -> Result<BenchReport, CliError> {
    let cfg = source.resolve(overrides)?;
    let model_cfg = cfg.model_config()?;
    let scale = model_cfg.scale;
    let (h, w) = output_hw;
    if h == 0 || w == 0 || h % scale != 0 || w % scale != 0 {
        return Err(CliError::Config(format!("output size {w}x{h} is not a positive multiple of scale {scale}")));
    }
    let lr_hw = (h / scale, w / scale);
    let real_model = SrModel::build(model_cfg.with_binarize(false), cfg.train.seed)?;
    let bin_model = SrModel::build(model_cfg.with_binarize(true), cfg.train.seed)?;
    let real_ops = count_ops(&real_model, lr_hw)?;
    let binary_ops = count_ops(&bin_model, lr_hw)?;
    let speedup = estimate_speedup(&real_ops, &binary_ops, &CostModel::default())?;
    let report = BenchReport {
        output_hw,
        real: row("real", &real_model, &real_ops, 1.0),
        binary: row("binary", &bin_model, &binary_ops, speedup),
        real_ops,
        binary_ops,
    };
    if let Some(out) = out_dir {
        let mut manifest = RunManifest::new("bench", out);
        source.record(&mut manifest);
        manifest.seed = Some(cfg.train.seed);
        manifest.config = Some(cfg.clone());
        ensure_dir(out)?;
        write_csv(&out.join(BENCH_FILE), &[report.real.clone(), report.binary.clone()])?;
        for (file, ops) in [("ops_real.csv", &report.real_ops), ("ops_binary.csv", &report.binary_ops)] {
            let rows: Vec<OpRow> = ops
                .entries
                .iter()
                .map(|e| OpRow {
                    name: &e.name,
                    kind: e.kind,
                    region: format!("{:?}", e.region),
                    mults: e.mults,
                    adds: e.adds,
                    bitops: e.bitops,
                })
                .collect();
            write_csv(&out.join(file), &rows)?;
        }
        manifest.finish(vec![BENCH_FILE.into(), "ops_real.csv".into(), "ops_binary.csv".into()])?;
    }
    Ok(report)
}
