//! On-disk cache of trained networks, keyed by the SHA-256 of the network
//! configuration and both datasets. Training is deterministic, so a cache
//! hit returns exactly what a fresh run would.

use std::fs;
use std::path::{Path, PathBuf};

use dendrofet_core::dnet::checkpoint::Checkpoint;
use dendrofet_core::dnet::{Dataset, EpochMetrics, NetworkConfig, TrainOutcome};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::train_logged;

#[derive(Serialize, Deserialize)]
struct Entry {
    metrics: Vec<EpochMetrics>,
    checkpoint: Checkpoint,
}

/// SHA-256 over the labels and the pixel bits.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((data.features as u64).to_le_bytes());
    h.update(&data.labels);
    for p in &data.pixels {
        h.update(p.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn cache_key(config: &NetworkConfig, train_digest: &str, test_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("network config serializes"));
    h.update(train_digest.as_bytes());
    h.update(test_digest.as_bytes());
    hex::encode(h.finalize())[..32].to_string()
}

/// Trained networks under `dir`, one JSON file per key.
pub struct TrainCache {
    dir: PathBuf,
    train_digest: String,
    test_digest: String,
}

impl TrainCache {
    pub fn new(dir: impl Into<PathBuf>, train_set: &Dataset, test_set: &Dataset) -> Self {
        Self { dir: dir.into(), train_digest: dataset_digest(train_set), test_digest: dataset_digest(test_set) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, config: &NetworkConfig) -> PathBuf {
        self.dir.join(format!("{}.json", cache_key(config, &self.train_digest, &self.test_digest)))
    }

    /// Cached outcome for `config`, training and storing it on a miss.
    pub fn train(&self, config: &NetworkConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutcome> {
        let path = self.path(config);
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(entry) = serde_json::from_str::<Entry>(&text) {
                if entry.checkpoint.network.config == *config {
                    return Ok(TrainOutcome { network: entry.checkpoint.network, metrics: entry.metrics });
                }
            }
        }
        let outcome = train_logged(config, train_set, test_set)?;
        fs::create_dir_all(&self.dir).map_err(|source| Error::Write { path: self.dir.clone(), source })?;
        let entry = Entry { metrics: outcome.metrics.clone(), checkpoint: Checkpoint::new(outcome.network.clone(), None) };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(&entry)?).map_err(|source| Error::Write { path: tmp.clone(), source })?;
        fs::rename(&tmp, &path).map_err(|source| Error::Write { path: path.clone(), source })?;
        Ok(outcome)
    }
}
