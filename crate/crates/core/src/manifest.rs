//! Run manifests: every CLI artifact records the configuration, seed and a
//! content hash of its inputs, so outputs can be traced back to exactly what
//! produced them.
//!
//! The hash covers command, seed, configuration and input bytes — not wall
//! time — so re-running with the same seed yields byte-identical artifacts;
//! timestamps live only in the manifest JSON itself.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Hex SHA-256 over (command, seed, config, input bytes).
    pub content_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub created_at: String,
}

/// Accumulates the deterministic parts of a manifest.
pub struct ManifestBuilder {
    command: String,
    seed: u64,
    config: serde_json::Value,
    hasher: Sha256,
    inputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update(seed.to_le_bytes());
        hasher.update(config.to_string().as_bytes());
        ManifestBuilder {
            command: command.to_string(),
            seed,
            config,
            hasher,
            inputs: Vec::new(),
        }
    }

    /// Hash an input file's bytes into the manifest identity.
    pub fn input_file(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.hasher.update(&bytes);
        self.inputs.push(path.to_path_buf());
        Ok(self)
    }

    pub fn finish(self, outputs: Vec<PathBuf>) -> RunManifest {
        let digest = self.hasher.finalize();
        let content_hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        RunManifest {
            schema_version: 1,
            command: self.command,
            seed: self.seed,
            config: self.config,
            content_hash,
            inputs: self.inputs,
            outputs,
            created_at: chrono::Utc::now().to_rfc3339(),
        }
    }
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body =
            serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    /// Short tag embedded into artifacts (CSV comment lines, JSON fields).
    pub fn tag(&self) -> String {
        format!("manifest {}", self.content_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn hash_is_deterministic_and_input_sensitive() {
        let dir = tempdir().unwrap();
        let input = dir.path().join("in.csv");
        std::fs::write(&input, "dim,t1\nv0,3\n").unwrap();
        let build = |seed: u64| {
            let mut b = ManifestBuilder::new("fit", seed, serde_json::json!({"k": 5}));
            b.input_file(&input).unwrap();
            b.finish(vec![dir.path().join("out.ndjson")])
        };
        let before = build(1).content_hash;
        assert_eq!(before, build(1).content_hash);
        assert_ne!(before, build(2).content_hash);
        std::fs::write(&input, "dim,t1\nv0,4\n").unwrap();
        assert_ne!(before, build(1).content_hash);
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = ManifestBuilder::new("synth", 7, serde_json::json!({"p0": 0.9}))
            .finish(vec![PathBuf::from("counts.csv")]);
        m.save(&path).unwrap();
        let loaded: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(loaded.content_hash, m.content_hash);
        assert!(m.tag().starts_with("manifest "));
    }
}
