//! Result files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;
use crate::error::{Error, Result};

/// Output directory of one run. Refuses a non-empty directory unless
/// `force` is set; records every file it writes for the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let root = root.into();
        if let Ok(mut entries) = fs::read_dir(&root) {
            if entries.next().is_some() && !force {
                return Err(Error::Usage(format!("output directory {} is not empty; pass --force to overwrite", root.display())));
            }
        }
        fs::create_dir_all(&root).map_err(|source| Error::Write { path: root.clone(), source })?;
        Ok(Self { root, written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|source| Error::Write { path: path.clone(), source })?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// CSV with a header row; every value is written with `{:e}`, the
    /// shortest representation that round-trips the `f64`.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Write { path: self.path(name), source: e.into_error() })?;
        self.write_bytes(name, &bytes)
    }

    /// Registers a file written by other means (e.g. a checkpoint).
    pub fn record(&mut self, name: &str) -> PathBuf {
        let path = self.path(name);
        self.written.push(path.clone());
        path
    }

    /// Writes `config.toml` and `manifest.json`; the manifest lists every
    /// output with its SHA-256.
    pub fn finish(mut self, experiment: &str, resolved: &Resolved, threads: Option<usize>) -> Result<PathBuf> {
        let config_toml = resolved.config.to_toml();
        self.write_bytes("config.toml", config_toml.as_bytes())?;
        let mut outputs = Vec::new();
        for path in &self.written {
            let bytes = fs::read(path).map_err(|source| Error::Read { path: path.clone(), source })?;
            outputs.push(ManifestEntry {
                file: path.strip_prefix(&self.root).unwrap_or(path).display().to_string(),
                bytes: bytes.len(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            tool: concat!("dendrofet ", env!("CARGO_PKG_VERSION")),
            experiment,
            seed: resolved.config.seed,
            network_seed: resolved.config.network.seed,
            threads,
            preset: resolved.preset.as_deref(),
            config_file: resolved.file.as_ref().map(|p| p.display().to_string()),
            overrides: &resolved.overrides,
            config_sha256: sha256_hex(config_toml.as_bytes()),
            config: &resolved.config,
            outputs,
        };
        self.write_json("manifest.json", &manifest)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    experiment: &'a str,
    seed: u64,
    network_seed: u64,
    threads: Option<usize>,
    preset: Option<&'a str>,
    config_file: Option<String>,
    overrides: &'a [String],
    config_sha256: String,
    config: &'a crate::config::Config,
    outputs: Vec<ManifestEntry>,
}
