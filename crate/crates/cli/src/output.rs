use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const SENTINEL: &str = "DONE";
pub const METADATA: &str = "metadata.json";

/// Artifact directory of one experiment run. Files are written directly; the
/// `DONE` sentinel is written last by [`OutputDir::finish`].
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
}

impl OutputDir {
    /// Create (or reuse with `force`) the directory. An existing non-empty
    /// directory is refused without `force`.
    pub fn prepare(path: &Path, force: bool) -> CliResult<Self> {
        if path.exists() {
            let occupied = fs::read_dir(path)
                .map_err(|e| CliError::io(path, e))?
                .next()
                .is_some();
            if occupied && !force {
                return Err(CliError::Refused(format!(
                    "{} already holds results; pass --force to overwrite",
                    path.display()
                )));
            }
            let sentinel = path.join(SENTINEL);
            if sentinel.exists() {
                fs::remove_file(&sentinel).map_err(|e| CliError::io(&sentinel, e))?;
            }
        } else {
            fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// CSV with a fixed header; every row must match the header width.
    pub fn write_csv<I>(&self, name: &str, header: &[&str], rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.file(name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        let fail = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
        w.write_record(header).map_err(fail)?;
        for row in rows {
            if row.len() != header.len() {
                return Err(CliError::Output(format!(
                    "{}: row has {} fields, header has {}",
                    path.display(),
                    row.len(),
                    header.len()
                )));
            }
            w.write_record(&row).map_err(fail)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Output(format!("{name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.file(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
    }

    /// Config echo, seed and version next to experiment-specific results.
    pub fn write_metadata(
        &self,
        cfg: &ExperimentConfig,
        results: serde_json::Value,
    ) -> CliResult<()> {
        let meta = serde_json::json!({
            "experiment": cfg.experiment().name(),
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "results": results,
        });
        self.write_json(METADATA, &meta)
    }

    pub fn finish(self) -> CliResult<()> {
        self.write_bytes(SENTINEL, b"")
    }
}

/// Shortest round-trip decimal form; empty for a missing value.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
