//! Run manifests: every subcommand records its config, seed and input
//! hashes next to its outputs, so any two runs with identical manifests are
//! guaranteed byte-identical outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "transit-eta-manifest/1";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    /// Command-specific configuration (keys sorted by serde_json).
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input file name -> sha256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Output file names, in write order.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            format: MANIFEST_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Hash one input file. Keys are file names (not paths) so identical
    /// pipelines in different directories produce identical manifests.
    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        let data = std::fs::read(path)?;
        let digest = Sha256::digest(&data);
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let mut key = name.clone();
        let mut k = 2;
        while self.inputs.contains_key(&key) {
            key = format!("{name}#{k}");
            k += 1;
        }
        self.inputs.insert(key, format!("{digest:x}"));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.push(name);
    }

    /// Write `manifest.json` into a directory, or `<file>.manifest.json`
    /// next to a file output.
    pub fn write(&self, target: &Path) -> std::io::Result<PathBuf> {
        let path = if target.is_dir() {
            target.join("manifest.json")
        } else {
            let mut name = target
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            name.push_str(".manifest.json");
            target.with_file_name(name)
        };
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json)?;
        Ok(path)
    }
}
