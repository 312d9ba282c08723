//! Persistence: datasets, baseline bundles, reports and synthetic streams.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub(crate) mod binary;
pub mod bundle;
pub mod dataset;
pub mod manifest;
pub mod report;
pub mod synthetic;

pub use bundle::{decode_baseline, encode_baseline, load_baseline, save_baseline};
pub use dataset::{load_dataset, save_dataset, DatasetFile};
pub use manifest::RunManifest;
pub use report::{load_report, save_report, summary, write_trace_csv};
pub use synthetic::{generate_synthetic, ClassSpec, SyntheticSpec, SyntheticStream};

/// Writes through a temporary file in the target directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
