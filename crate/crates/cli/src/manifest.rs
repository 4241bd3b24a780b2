use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{RunConfig, SCHEMA_VERSION};

/// JSON record written next to every set of outputs. Feeding it back through
/// `--config` reproduces the run.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub tool: String,
    pub subcommand: &'a str,
    pub config: &'a RunConfig,
    pub outputs: Vec<String>,
    pub status: &'a str,
    pub results: Value,
}

/// Collects output files of one run under its directory.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Open `name` for writing and record it.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn finish(self, subcommand: &str, cfg: &RunConfig, status: &str, results: Value) -> Result<PathBuf> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            tool: format!("confweld {}", env!("CARGO_PKG_VERSION")),
            subcommand,
            config: cfg,
            outputs: self.files,
            status,
            results,
        };
        let path = self.dir.join(format!("{subcommand}.manifest.json"));
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
        Ok(path)
    }
}
