//! Everything needed to replay a run: the full configuration, the dataset
//! identity and where outputs went.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::atomic_write;
use super::bundle::BUNDLE_VERSION;
use super::dataset::DATASET_VERSION;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::nn::CHECKPOINT_VERSION;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub manifest: u32,
    pub dataset: u32,
    pub bundle: u32,
    pub checkpoint: u32,
}

impl Default for FormatVersions {
    fn default() -> Self {
        Self {
            manifest: MANIFEST_VERSION,
            dataset: DATASET_VERSION,
            bundle: BUNDLE_VERSION,
            checkpoint: CHECKPOINT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub formats: FormatVersions,
    pub config: EngineConfig,
    pub dataset: PathBuf,
    /// Hex SHA-256 of the dataset file.
    pub dataset_sha256: String,
    pub use_ground_truth: bool,
    pub report: PathBuf,
    pub trace: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(
        config: EngineConfig,
        dataset: &Path,
        use_ground_truth: bool,
        report: &Path,
        trace: &Path,
    ) -> Result<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            formats: FormatVersions::default(),
            config,
            dataset: dataset.to_path_buf(),
            dataset_sha256: sha256_file(dataset)?,
            use_ground_truth,
            report: report.to_path_buf(),
            trace: trace.to_path_buf(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.formats != FormatVersions::default() {
            return Err(Error::InvalidData(format!(
                "manifest written with formats {:?}, this build reads {:?}",
                m.formats,
                FormatVersions::default()
            )));
        }
        Ok(m)
    }

    /// Fails when the dataset on disk no longer matches the recorded hash.
    pub fn verify_dataset(&self) -> Result<()> {
        let found = sha256_file(&self.dataset)?;
        if found != self.dataset_sha256 {
            return Err(Error::InvalidData(format!(
                "dataset {} changed: sha256 {found}, manifest records {}",
                self.dataset.display(),
                self.dataset_sha256
            )));
        }
        Ok(())
    }
}
