use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use objhal::io::{file_digest, sha256_hex, write_json};
use objhal::Result;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// What a command ran on and with. Everything except the duration is
/// reproducible across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

pub struct Recorder {
    command: String,
    started: Instant,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    out_dir: PathBuf,
}

impl Recorder {
    pub fn start(command: &str, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| objhal::Error::InvalidInput(format!("{}: {e}", out_dir.display())))?;
        Ok(Self {
            command: command.to_owned(),
            started: Instant::now(),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn config(&mut self, config: serde_json::Value) {
        self.config = config;
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = if path.is_dir() { dir_digest(path)? } else { file_digest(path)? };
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn out(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_owned());
        self.out_dir.join(name)
    }

    pub fn finish(self) -> Result<RunManifest> {
        let config_bytes = serde_json::to_vec(&self.config).expect("config serializes");
        let mut outputs = self.outputs;
        outputs.sort();
        outputs.dedup();
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config_digest: sha256_hex(&config_bytes),
            config: self.config,
            inputs: self.inputs,
            outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.out_dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

/// Digest over the sorted names and contents of a directory's files.
fn dir_digest(dir: &Path) -> Result<String> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| objhal::Error::InvalidInput(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut material = String::new();
    for p in entries {
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        material.push_str(&format!("{name}\0{}\n", file_digest(&p)?));
    }
    Ok(sha256_hex(material.as_bytes()))
}
