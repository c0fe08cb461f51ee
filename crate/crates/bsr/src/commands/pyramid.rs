use std::path::Path;

use bsr_core::pyramid::{build_laplacian, collapse, pad_to_multiple, sparsity_summary, PyramidStats};
use bsr_core::Tensor;
use serde::{Deserialize, Serialize};

use super::ensure_dir;
use crate::error::CliError;
use crate::io::load_dir;
use crate::report::{write_csv, RunManifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub level: usize,
    pub bin: usize,
    pub center: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidSummaryRow {
    pub level: usize,
    pub fraction_near_zero: f64,
    pub mean_abs: f64,
    pub center_mass: f64,
    /// The centre bin holds strictly more mass than any other bin.
    pub center_is_peak: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidReport {
    pub stats: PyramidStats,
    pub summary: Vec<PyramidSummaryRow>,
    /// Largest absolute error of collapse(build(x)) against x over the corpus.
    pub max_reconstruction_error: f32,
}

pub const HISTOGRAM_FILE: &str = "pyramid_histograms.csv";
pub const SUMMARY_FILE: &str = "pyramid_summary.csv";

/// Gradient-layer histograms and near-zero fractions (`|v| <= tau`) of every
/// PNG in `data_dir`.
pub fn analyze_pyramid(images: &[Tensor], levels: usize, bins: usize, tau: f64) -> Result<PyramidReport, CliError> {
    let mut pyramids = Vec::with_capacity(images.len());
    let mut max_err = 0.0f32;
    for img in images {
        let padded = pad_to_multiple(img, 1 << levels);
        let p = build_laplacian(&padded, levels)?;
        max_err = max_err.max(collapse(&p)?.max_abs_diff(&padded).expect("collapse keeps the shape"));
        pyramids.push(p);
    }
    let stats = PyramidStats::from_pyramids(&pyramids, bins)?;
    let c = stats.center_bin();
    let summary = sparsity_summary(&stats, tau)?
        .into_iter()
        .map(|s| {
            let h = &stats.histograms[s.level];
            PyramidSummaryRow {
                level: s.level,
                fraction_near_zero: s.fraction_near_zero,
                mean_abs: s.mean_abs,
                center_mass: h[c],
                center_is_peak: h.iter().enumerate().all(|(i, &m)| i == c || m < h[c]),
            }
        })
        .collect();
    Ok(PyramidReport {
        stats,
        summary,
        max_reconstruction_error: max_err,
    })
}

pub fn cmd_analyze_pyramid(data_dir: &Path, out_dir: Option<&Path>, levels: usize, bins: usize, tau: f64) -> Result<PyramidReport, CliError> {
    let images: Vec<Tensor> = load_dir(data_dir)?.into_iter().map(|(_, t)| t).collect();
    let report = analyze_pyramid(&images, levels, bins, tau)?;
    if let Some(out) = out_dir {
        let mut manifest = RunManifest::new("analyze-pyramid", out);
        manifest.data_dir = Some(data_dir.display().to_string());
        ensure_dir(out)?;
        let width = 2.0 / bins as f64;
        let half = (bins / 2) as f64;
        let hist: Vec<HistogramRow> = report
            .stats
            .histograms
            .iter()
            .enumerate()
            .flat_map(|(level, h)| {
                h.iter().enumerate().map(move |(bin, &mass)| HistogramRow {
                    level,
                    bin,
                    center: (bin as f64 - half) * width,
                    mass,
                })
            })
            .collect();
        write_csv(&out.join(HISTOGRAM_FILE), &hist)?;
        write_csv(&out.join(SUMMARY_FILE), &report.summary)?;
        manifest.finish(vec![HISTOGRAM_FILE.into(), SUMMARY_FILE.into()])?;
    }
    Ok(report)
}
