//! Run records: a JSON sidecar per command capturing everything needed to
//! reproduce the artifact (command, version, seed, jobs, flags, input
//! hashes). Records carry no timestamps, so replaying one is byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fastprio_core::hashing::fnv1a64_hex;
use fastprio_core::{Error, Result};

#[derive(Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub jobs: usize,
    pub args: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunRecord {
    pub fn new(command: &str, seed: u64, jobs: usize) -> Self {
        RunRecord {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            jobs,
            args: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, path: impl AsRef<Path>) -> Result<&mut Self> {
        let path = path.as_ref();
        self.inputs
            .insert(path.display().to_string(), hash_path(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.outputs.push(path.as_ref().display().to_string());
        self
    }

    /// Writes `<primary output>.run.json`.
    pub fn write(&self, primary_output: impl AsRef<Path>) -> Result<()> {
        let mut path = primary_output.as_ref().as_os_str().to_owned();
        path.push(".run.json");
        let path = PathBuf::from(path);
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Content hash of a file, or of a directory's files (keyed by their path
/// relative to the directory, so equal trees hash equally wherever they
/// live).
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = Vec::new();
        collect_files(path, &mut entries)?;
        entries.sort();
        let mut combined = Vec::new();
        for entry in entries {
            let relative = entry.strip_prefix(path).unwrap_or(&entry);
            combined.extend_from_slice(relative.display().to_string().as_bytes());
            combined.extend_from_slice(&std::fs::read(&entry).map_err(|e| Error::io(&entry, e))?);
        }
        Ok(fnv1a64_hex(&combined))
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(fnv1a64_hex(&bytes))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            let is_record = path
                .file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.ends_with(".run.json"))
                .unwrap_or(false);
            if !is_record {
                out.push(path);
            }
        }
    }
    Ok(())
}
