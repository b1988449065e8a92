//! Run records: one metric row per epoch plus a config hash, appendable
//! to a JSON-lines ledger.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Metrics for one epoch. `loss`/`ce`/`da`/`fa` describe the primary
/// network (the one used at inference); the `peer_*` fields describe the
/// auxiliary network of two-network runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub da: f64,
    pub fa: f64,
    pub train_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_ce: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_da: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_fa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_train_acc: Option<f64>,
}

/// Full record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Stable identifier derived from mode, dataset, arch, seed, and the
    /// config hash; a rerun of the same resolved config reuses it.
    #[serde(default)]
    pub run_id: String,
    /// Kind of run, e.g. `inbiased`, `baseline_rgb`, `madry_inbiased`.
    pub mode: String,
    pub config_hash: String,
    /// Library version that produced the record.
    #[serde(default)]
    pub revision: String,
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    #[serde(default)]
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn new(mode: &str, config_hash: String, dataset: String, arch: String, seed: u64) -> Self {
        Self {
            run_id: format!("{mode}-{dataset}-{arch}-s{seed}-{config_hash}"),
            mode: mode.to_string(),
            config_hash,
            revision: env!("CARGO_PKG_VERSION").to_string(),
            dataset,
            arch,
            seed,
            epochs: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn final_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Stable short hash of any serializable config (first 16 hex chars of
/// SHA-256 over its canonical JSON form).
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Append one record to a JSON-lines ledger, creating the file (and
/// parent directories) on first use.
pub fn append_jsonl(path: &Path, record: &RunRecord) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let line = serde_json::to_string(record)?;
    writeln!(file, "{line}")?;
    Ok(())
}

/// Read every record from a JSON-lines ledger.
pub fn read_jsonl(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::Data(format!("missing results ledger: {}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!(
                "corrupt ledger {} at line {}: {e}",
                path.display(),
                i + 1
            ))
        })?;
        out.push(rec);
    }
    Ok(out)
}
