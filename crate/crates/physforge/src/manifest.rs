//! Reproducibility sidecars (`<output>.manifest.json`) and the hash check
//! that lets an unchanged stage be skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::jsonl::{sha256_file, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileHash { path: path.display().to_string(), sha256: sha256_file(path)? })
    }

    /// Digest of every `.lean` file under `root`, by relative path.
    pub fn of_tree(root: &Path) -> Result<Self> {
        let mut listing = String::new();
        for (abs, rel) in crate::tree::lean_files(root)? {
            listing.push_str(&format!("{rel}\0{}\n", sha256_file(&abs)?));
        }
        Ok(FileHash { path: root.display().to_string(), sha256: physforge_core::hash::sha256_hex(listing.as_bytes()) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub versions: BTreeMap<String, String>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub params: Value,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("physforge".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("lean_toolchain_default".to_string(), physforge_core::verify::DEFAULT_TOOLCHAIN_VERSION.to_string()),
    ])
}

pub fn read(output: &Path) -> Result<Option<Manifest>> {
    let path = sidecar_path(output);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).ok())
}

/// Everything that determines a stage's outputs.
#[derive(Debug, Clone)]
pub struct StageRun {
    pub command: String,
    pub config_hash: Option<String>,
    pub inputs: Vec<FileHash>,
    pub seeds: BTreeMap<String, u64>,
    pub params: Value,
}

impl StageRun {
    /// Hashes `inputs` now; later edits to them make the stage stale.
    /// Directories are hashed as `.lean` trees.
    pub fn new(command: &str, inputs: &[&Path], params: Value) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| if p.is_dir() { FileHash::of_tree(p) } else { FileHash::of(p) })
            .collect::<Result<_>>()?;
        Ok(StageRun { command: command.to_string(), config_hash: None, inputs, seeds: BTreeMap::new(), params })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn config_hash(mut self, hash: Option<String>) -> Self {
        self.config_hash = hash;
        self
    }

    /// True when every output exists, still hashes to what its sidecar
    /// recorded, and the sidecar was written by an identical run.
    pub fn up_to_date(&self, outputs: &[&Path]) -> Result<bool> {
        if outputs.is_empty() {
            return Ok(false);
        }
        for out in outputs {
            if !out.exists() {
                return Ok(false);
            }
            let Some(m) = read(out)? else { return Ok(false) };
            let same_run = m.command == self.command
                && m.config_hash == self.config_hash
                && m.inputs == self.inputs
                && m.seeds == self.seeds
                && m.params == self.params;
            if !same_run {
                return Ok(false);
            }
            let current = FileHash::of(out)?;
            if !m.outputs.contains(&current) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Writes the same manifest next to every output.
    pub fn record(&self, outputs: &[&Path]) -> Result<Manifest> {
        let manifest = Manifest {
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            inputs: self.inputs.clone(),
            outputs: outputs.iter().map(|p| FileHash::of(p)).collect::<Result<_>>()?,
            versions: versions(),
            seeds: self.seeds.clone(),
            params: self.params.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        for out in outputs {
            write_atomic(&sidecar_path(out), text.as_bytes())?;
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("w/c.jsonl")), Path::new("w/c.jsonl.manifest.json"));
    }

    #[test]
    fn staleness() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        let output = dir.path().join("out.jsonl");
        std::fs::write(&input, "a\n").unwrap();
        std::fs::write(&output, "b\n").unwrap();

        let run = StageRun::new("extract", &[&input], json!({"k": 1})).unwrap().seed("split", 7);
        assert!(!run.up_to_date(&[&output]).unwrap());
        run.record(&[&output]).unwrap();
        assert!(run.up_to_date(&[&output]).unwrap());

        let other_params = StageRun::new("extract", &[&input], json!({"k": 2})).unwrap().seed("split", 7);
        assert!(!other_params.up_to_date(&[&output]).unwrap());

        std::fs::write(&output, "tampered\n").unwrap();
        assert!(!run.up_to_date(&[&output]).unwrap());
        run.record(&[&output]).unwrap();

        std::fs::write(&input, "changed\n").unwrap();
        let rerun = StageRun::new("extract", &[&input], json!({"k": 1})).unwrap().seed("split", 7);
        assert!(!rerun.up_to_date(&[&output]).unwrap());
    }
}
