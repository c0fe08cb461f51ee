//! Run artifacts: JSON-lines training logs, run manifests and CSV tables.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use bsr_core::train::{EpochRecord, TrainingLog};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

/// One line of `log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: Option<f64>,
    pub bit_flip_fraction: Option<f64>,
}

impl From<&EpochRecord> for LogLine {
    fn from(r: &EpochRecord) -> Self {
        LogLine {
            epoch: r.epoch,
            lr: r.lr,
            train_loss: r.train_loss,
            val_psnr: r.val_psnr,
            bit_flip_fraction: r.bit_flip_fraction,
        }
    }
}

pub fn write_log(path: &Path, log: &TrainingLog) -> Result<(), CliError> {
    let mut out = BufWriter::new(create(path)?);
    for r in log {
        let line = serde_json::to_string(&LogLine::from(r)).expect("log line serializes");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    BufReader::new(file)
        .lines()
        .map(|l| {
            let l = l?;
            serde_json::from_str(&l).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Everything needed to rerun a command: the resolved config (which carries
/// the seed), the inputs and where the outputs went.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub config_path: Option<String>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub config: Option<RunConfig>,
    pub model_path: Option<String>,
    pub data_dir: Option<String>,
    pub out_dir: String,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> RunManifest {
        RunManifest {
            command: command.into(),
            args: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            out_dir: out_dir.display().to_string(),
            started_unix: unix_now(),
            ..RunManifest::default()
        }
    }

    /// Stamps the finish time and writes `manifest.json` into the output directory.
    pub fn finish(mut self, outputs: Vec<String>) -> Result<(), CliError> {
        self.outputs = outputs;
        self.finished_unix = unix_now();
        self.write(&Path::new(&self.out_dir).join(MANIFEST_FILE))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<RunManifest, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))).collect()
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
