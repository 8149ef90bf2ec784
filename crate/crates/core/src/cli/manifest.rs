use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Paths relative to the run directory, mapped to SHA-256 hex digests.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            stages: BTreeMap::new(),
        }
    }

    /// The manifest in `dir`, or a fresh one when none exists yet.
    pub fn open(dir: &Path, config: &RunConfig) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config.clone()));
        }
        let text = fs::read_to_string(&path)?;
        let mut m: RunManifest = serde_json::from_str(&text)?;
        m.config = config.clone();
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        Ok(m)
    }

    /// Last recorded checksum of an artifact produced by any stage.
    pub fn recorded(&self, rel: &str) -> Option<&str> {
        self.stages
            .values()
            .filter_map(|s| s.outputs.get(rel).map(|c| (s.finished_unix_ms, c)))
            .max_by_key(|(t, _)| *t)
            .map(|(_, c)| c.as_str())
    }

    /// Checksum of an input artifact, failing when it no longer matches
    /// what an earlier stage wrote.
    pub fn verify_input(&self, dir: &Path, rel: &str) -> Result<String> {
        let sum = file_checksum(&dir.join(rel))?;
        if let Some(expect) = self.recorded(rel) {
            if expect != sum {
                return Err(Error::ChecksumMismatch {
                    path: dir.join(rel),
                    expected: expect.to_string(),
                    found: sum,
                });
            }
        }
        Ok(sum)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Checksums of every output across stages, keyed by path.
    pub fn output_checksums(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for s in self.stages.values() {
            out.extend(s.outputs.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        out
    }
}
