//! Argument parsing and dispatch for the `bsr` binary.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::*;
use crate::config::{AlphaName, PRESETS};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bsr", version, about = "Train, evaluate and analyze binary-weight super-resolution models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlphaArg {
    Learnable,
    Deterministic,
}

/// Config selection plus overrides, shared by every config-driven command.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config with [model] and [train] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset (see `show-config --help`).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long, value_enum)]
    pub alpha_mode: Option<AlphaArg>,
    #[arg(long, value_enum)]
    pub binarize: Option<OnOff>,
}

impl RunArgs {
    fn source(&self) -> ConfigSource {
        ConfigSource {
            config: self.config.clone(),
            preset: self.preset.clone(),
        }
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            epochs: self.epochs,
            scale: self.scale,
            blocks: self.blocks,
            alpha_mode: self.alpha_mode.map(|a| match a {
                AlphaArg::Learnable => AlphaName::Learnable,
                AlphaArg::Deterministic => AlphaName::Deterministic,
            }),
            binarize: self.binarize.map(|b| b == OnOff::On),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes model.bsrn, log.jsonl, config.toml and manifest.json.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Image directory: `train/` and `val/` subdirectories, or flat PNGs.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR-Y/SSIM-Y of a model and of bicubic upsampling.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Op counts, model sizes and estimated speedup of binary vs real weights.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Output image size as WIDTHxHEIGHT.
        #[arg(long, default_value = "1200x800")]
        size: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train learnable and deterministic scaling-factor twins side by side.
    CompareAlpha {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Train one model per residual-block count.
    DepthSweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16,24")]
        depths: Vec<usize>,
    },
    /// Laplacian-pyramid gradient-layer histograms of an image directory.
    AnalyzePyramid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 101)]
        bins: usize,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
    },
    /// Upscale a single PNG with a trained model.
    Upscale {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the resolved config as TOML.
    ShowConfig {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("size `{s}` is not WIDTHxHEIGHT"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { run, data, out } => {
            let o = cmd_train(&run.source(), &run.overrides(), &data, &out)?;
            println!("epochs        {}", o.log.len());
            println!("final loss    {}", fmt_opt(o.final_loss()));
            println!("val PSNR-Y    {}", fmt_opt(o.val_psnr));
            println!("bicubic PSNR  {}", fmt_opt(o.bicubic_psnr));
            println!("model         {}", out.join(MODEL_FILE).display());
        }
        Command::Eval { model, data, out } => {
            let r = cmd_eval(&model, &data, out.as_deref())?;
            println!("{:<24} {:>9} {:>8} {:>12} {:>12}", "image", "psnr_y", "ssim_y", "bicubic_psnr", "bicubic_ssim");
            for row in r.rows.iter().chain([&r.mean]) {
                println!(
                    "{:<24} {:>9.4} {:>8.4} {:>12.4} {:>12.4}",
                    row.image, row.psnr_y, row.ssim_y, row.bicubic_psnr_y, row.bicubic_ssim_y
                );
            }
        }
        Command::Bench { run, size, out } => {
            let r = cmd_bench(&run.source(), &run.overrides(), parse_size(&size)?, out.as_deref())?;
            println!(
                "{:<8} {:>13} {:>11} {:>10} {:>16} {:>16} {:>16} {:>9}",
                "variant", "binary_params", "real_params", "size_mb", "mults", "adds", "bitops", "residual"
            );
            for row in [&r.real, &r.binary] {
                println!(
                    "{:<8} {:>13} {:>11} {:>10.4} {:>16} {:>16} {:>16} {:>9.4}",
                    row.variant, row.binary_params, row.real_params, row.size_mb, row.mults, row.adds, row.bitops, row.residual_conv_fraction
                );
            }
            println!("estimated speedup {:.3}", r.speedup());
        }
        Command::CompareAlpha { run, data, out, seeds } => {
            let rows = cmd_compare_alpha(&run.source(), &run.overrides(), &data, &out, &seeds)?;
            println!("{:>6} {:<14} {:>12} {:>10} {:>12}", "seed", "alpha_mode", "final_loss", "val_psnr", "bicubic_psnr");
            for r in rows {
                let mode = format!("{:?}", r.alpha_mode).to_lowercase();
                println!(
                    "{:>6} {:<14} {:>12} {:>10} {:>12}",
                    r.seed,
                    mode,
                    fmt_opt(r.final_loss),
                    fmt_opt(r.val_psnr),
                    fmt_opt(r.bicubic_psnr)
                );
            }
        }
        Command::DepthSweep { run, data, out, depths } => {
            let rows = cmd_depth_sweep(&run.source(), &run.overrides(), &data, &out, &depths)?;
            println!("{:>6} {:>13} {:>11} {:>10} {:>10} {:>10}", "blocks", "binary_params", "real_params", "binary_mb", "real_mb", "val_psnr");
            for r in rows {
                println!(
                    "{:>6} {:>13} {:>11} {:>10.4} {:>10.4} {:>10}",
                    r.blocks, r.binary_params, r.real_params, r.binary_mb, r.real_mb, fmt_opt(r.val_psnr)
                );
            }
        }
        Command::AnalyzePyramid { data, out, levels, bins, tau } => {
            let r = cmd_analyze_pyramid(&data, out.as_deref(), levels, bins, tau)?;
            println!("{:>5} {:>14} {:>10} {:>11} {:>6}", "level", "frac_near_zero", "mean_abs", "center_mass", "peak");
            for s in &r.summary {
                println!(
                    "{:>5} {:>14.4} {:>10.5} {:>11.4} {:>6}",
                    s.level, s.fraction_near_zero, s.mean_abs, s.center_mass, s.center_is_peak
                );
            }
            println!("max reconstruction error {:e}", r.max_reconstruction_error);
        }
        Command::Upscale { model, input, output } => cmd_upscale(&model, &input, &output)?,
        Command::ShowConfig { run } => {
            if run.config.is_none() && run.preset.is_none() {
                println!("presets: {}", PRESETS.join(", "));
                return Ok(());
            }
            print!("{}", run.source().resolve(&run.overrides())?.to_toml());
        }
    }
    Ok(())
}

/// Parses `std::env::args`, runs the command and maps errors to exit codes.
pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.to_exit()
        }
    }
}
