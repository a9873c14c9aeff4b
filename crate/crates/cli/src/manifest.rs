//! Run manifests: every command records its resolved configuration,
//! derived seeds, and a checksum for each file it read or wrote, so a
//! run can be audited and replayed.

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub substream_seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: "dasmon",
            version: dasmon::VERSION,
            command: command.to_string(),
            config,
            substream_seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, label: &str, value: u64) {
        self.substream_seeds.insert(label.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Record one output file; directories are walked recursively in
    /// sorted order.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
                .map(|e| Ok(e?.path()))
                .collect::<Result<_>>()?;
            entries.sort();
            for entry in entries {
                self.output(&entry)?;
            }
            return Ok(());
        }
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Write `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
