//! Output directory with content hashes, a deterministic manifest and a
//! separate timing log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Artifact file name to SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct OutputDir {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
    timings: Vec<StageTiming>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: BTreeMap::new(),
            timings: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        println!("  wrote {}", path.display());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Runs `f` as a named stage, logging and recording its wall time.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        println!("[{name}] started");
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        println!("[{name}] {} in {seconds:.2}s", if out.is_ok() { "finished" } else { "failed" });
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds,
        });
        out
    }

    /// Writes `manifest.json` and `timings.json`.
    pub fn finish(self, command: &str, seed: Option<u64>) -> Result<Manifest> {
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            artifacts: self.artifacts,
        };
        let write = |name: &str, text: String| {
            let path = self.root.join(name);
            std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
        };
        write(MANIFEST, serde_json::to_string_pretty(&manifest)?)?;
        write(TIMINGS, serde_json::to_string_pretty(&self.timings)?)?;
        Ok(manifest)
    }
}

/// Reads an artifact produced by an earlier subcommand.
pub fn read_artifact(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(CliError::MissingArtifact(path));
    }
    std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    Ok(serde_json::from_str(&read_artifact(dir, name)?)?)
}
