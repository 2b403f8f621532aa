use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use attnseg::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

/// Record of one command run: what went in and what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output paths relative to the manifest's base directory.
    pub outputs: Vec<String>,
}

pub fn file_hash(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::Dependency { path: path.to_path_buf() });
    }
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex(&Sha256::digest(bytes)))
}

/// One digest over several files, order-sensitive.
pub fn files_hash(paths: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in paths {
        hasher.update(file_hash(path)?.as_bytes());
    }
    Ok(hex(&hasher.finalize()))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash()?,
            seed: config.seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, name: impl Into<String>, digest: String) {
        self.inputs.insert(name.into(), digest);
    }

    pub fn output(&mut self, base: &Path, path: &Path) {
        let rel = path.strip_prefix(base).unwrap_or(path);
        self.outputs.push(rel.to_string_lossy().replace('\\', "/"));
    }

    /// Writes `<base>/manifests/<name>.json`.
    pub fn write(&mut self, base: &Path, name: &str) -> Result<PathBuf> {
        self.outputs.sort();
        let dir = base.join("manifests");
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
        let path = dir.join(format!("{name}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|source| Error::Io { path: path.clone(), source })?;
        Ok(path)
    }
}
