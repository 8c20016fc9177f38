//! Data ingestion, configuration and result files.
//!
//! Every output CSV starts with one comment line
//! `# zonal-market <mode> config_hash=<hex> seed=<n>` followed by a header
//! row. Readers skip `#` lines, so outputs load back through the same
//! readers used for inputs.

pub mod config;
pub mod dataset;
pub mod run;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{Mode, RunConfig};
pub use dataset::{load_dataset, load_prices, DatasetPaths, HourlyDataset};
pub use run::{run, RunSummary};

/// Problems with files, schemas or configuration.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("{path}, line {line}: {msg}")]
    Schema { path: PathBuf, line: usize, msg: String },
    #[error("{path}: missing hours {}", hours.join(", "))]
    MissingHours { path: PathBuf, hours: Vec<String> },
    #[error("configuration: {0}")]
    Config(String),
}

impl InputError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        InputError::Io { path: path.to_path_buf(), msg: e.to_string() }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl RunError {
    /// 1 for input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Input(_) => 1,
            RunError::Numerical(_) => 2,
        }
    }

    pub fn numerical(e: impl std::fmt::Display) -> Self {
        RunError::Numerical(e.to_string())
    }
}

/// Provenance line written at the top of every output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub mode: Mode,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!("# zonal-market {} config_hash={} seed={}", self.mode.name(), self.config_hash, self.seed)
    }

    /// Parses a provenance line.
    pub fn parse(line: &str) -> Option<Provenance> {
        let mut it = line.strip_prefix("# zonal-market ")?.split_whitespace();
        let mode = Mode::parse(it.next()?)?;
        let config_hash = it.next()?.strip_prefix("config_hash=")?.to_string();
        let seed = it.next()?.strip_prefix("seed=")?.parse().ok()?;
        Some(Provenance { mode, config_hash, seed })
    }
}

/// Reads the provenance line of an output file.
pub fn read_provenance(path: &Path) -> Result<Option<Provenance>, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError::io(path, e))?;
    Ok(text.lines().next().and_then(Provenance::parse))
}

/// CSV writer that emits the provenance line first.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, provenance: &Provenance, header: &[&str]) -> Result<Self, InputError> {
        let mut file = BufWriter::new(File::create(path).map_err(|e| InputError::io(path, e))?);
        writeln!(file, "{}", provenance.line()).map_err(|e| InputError::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header).map_err(|e| InputError::io(path, e))?;
        Ok(CsvOut { path: path.to_path_buf(), writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), InputError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| InputError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf, InputError> {
        self.writer.flush().map_err(|e| InputError::io(&self.path, e))?;
        Ok(self.path)
    }
}

/// Shortest round-trip decimal form; empty for a missing value.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}
