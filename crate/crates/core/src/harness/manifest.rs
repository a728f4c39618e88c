//! Run manifest: the full resolved configuration and provenance, persisted
//! before any training step.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

use super::config::RunConfig;

pub const MANIFEST_FORMAT: &str = "oransim-manifest v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    /// Full resolved configuration, defaults included.
    pub config: RunConfig,
    pub config_hash: String,
    /// Hash of the comparable part (environment + evaluation protocol).
    pub env_hash: String,
    pub master_seed: u64,
    pub code_revision: String,
    pub started_at: String,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            config: config.clone(),
            config_hash: config.config_hash(),
            env_hash: config.env_hash(),
            master_seed: config.seed,
            code_revision: format!("oransim {}", env!("CARGO_PKG_VERSION")),
            started_at: chrono::Utc::now().to_rfc3339(),
        }
    }
}

/// Persist the manifest. Called before the first training step.
pub fn write_manifest(config: &RunConfig, path: &Path) -> Result<RunManifest> {
    let manifest = RunManifest::new(config);
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| SimError::parse("manifest", e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| SimError::parse(path.display().to_string(), e.to_string()))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(SimError::parse(
            path.display().to_string(),
            format!("unsupported manifest format '{}'", manifest.format),
        ));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let config = RunConfig::default();
        let written = write_manifest(&config, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(written, loaded);
        assert_eq!(loaded.config, config);
        assert_eq!(loaded.config_hash, config.config_hash());
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let path = Path::new("/nonexistent-root-dir/manifest.json");
        assert!(matches!(
            write_manifest(&RunConfig::default(), path),
            Err(SimError::Io(_))
        ));
    }
}
