//! Run manifests: everything needed to re-execute a command bit-identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rrm_core::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// One executed command. The resolved config maps (not the flag soup) are
/// authoritative; `rerun` replays from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub verb: String,
    pub command_line: Vec<String>,
    pub seed: u64,
    /// Resolved environment config as key=value pairs.
    pub net_config: BTreeMap<String, String>,
    /// Resolved ITLinQ constants.
    pub itlinq: BTreeMap<String, String>,
    /// Resolved trainer config; present for `train` only.
    pub trainer_config: Option<BTreeMap<String, String>>,
    /// Policy spec(s): one for collect/eval, the compared set for compare.
    pub policies: Vec<String>,
    pub episodes: Option<usize>,
    pub window: Option<usize>,
    /// Input datasets with content hashes, in argument order.
    pub datasets: Vec<DatasetRef>,
    pub proportions: Option<Vec<f64>>,
    pub size: Option<usize>,
    /// Referenced model files with content hashes.
    pub models: Vec<DatasetRef>,
    pub code_version: String,
    pub wall_clock_utc: String,
    /// Output kind -> path, e.g. "dataset", "model", "curves", "csv",
    /// "summary".
    pub outputs: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest format_version {}",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// Manifests sit next to their primary output.
pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    name.push_str(".manifest.json");
    primary_output.with_file_name(name)
}
