use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::alloc::MemoryMethod;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Record of one CLI run, written once into its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the configuration text the run used.
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub peak_memory_bytes: Option<usize>,
    pub memory_method: MemoryMethod,
    pub deterministic: bool,
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    /// Writes `dir/manifest.json`; refuses to replace an existing manifest.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_NAME);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::ManifestExists(path)),
            Err(e) => return Err(e.into()),
        };
        f.write_all(&serde_json::to_vec_pretty(self)?)?;
        f.write_all(b"\n")?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_NAME))?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            config_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "gen-data".into(),
            args: vec![],
            config_hash: config_hash(""),
            seed: 3,
            code_version: "test".into(),
            outputs: vec![dir.path().join("x")],
            started_unix: 0,
            wall_clock_secs: 0.5,
            peak_memory_bytes: None,
            memory_method: MemoryMethod::ResidentSet,
            deterministic: true,
        };
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
        assert!(matches!(m.write(dir.path()), Err(Error::ManifestExists(_))));
    }
}
