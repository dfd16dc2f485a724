//! `run.json` sidecars: resolved config plus content digests of every input
//! and output. Nothing time-dependent goes in, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// SHA-256 of a file, or of a directory's files in name order.
pub fn digest(path: &Path) -> Result<String, CliError> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        names.retain(|p| p.is_file() && p.file_name().is_some_and(|n| n != "run.json"));
        names.sort();
        for p in names {
            h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(&p)?);
        }
    } else {
        h.update(
            fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Serialize)]
pub struct RunLog<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub parallel: bool,
    pub config: &'a RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, Value>,
}

impl<'a> RunLog<'a> {
    pub fn new(command: &'a str, config: &'a RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            parallel: visitpat::par::is_parallel(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.insert(path.display().to_string(), digest(path)?);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    /// Sidecar path for a primary output: `dir/run.json` for directories,
    /// `<file>.run.json` otherwise.
    pub fn sidecar_for(primary: &Path) -> PathBuf {
        if primary.is_dir() {
            primary.join("run.json")
        } else {
            let mut name = primary.file_name().unwrap_or_default().to_os_string();
            name.push(".run.json");
            primary.with_file_name(name)
        }
    }

    pub fn write(&self, primary: &Path) -> Result<PathBuf, CliError> {
        let path = Self::sidecar_for(primary);
        let mut f = fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(path)
    }
}
