//! Output directories: atomic file writes and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

/// Files whose content depends on wall-clock time; everything else in an
/// output directory is reproducible.
pub const TIMING_FILE: &str = "timing.csv";

pub struct OutDir {
    root: PathBuf,
    files: Mutex<Vec<String>>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf(), files: Mutex::new(Vec::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `rel` through a temporary sibling and a rename, so readers
    /// never see a partial file.
    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        let dir = path.parent().expect("file inside the output directory");
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let name = path.file_name().expect("file name").to_string_lossy();
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("cannot move {} into place", path.display()))?;
        self.files.lock().expect("file list").push(rel.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Writes the manifest listing every file written so far.
    pub fn finish(&self, mut manifest: Manifest) -> anyhow::Result<()> {
        let mut files = self.files.lock().expect("file list").clone();
        files.sort();
        files.dedup();
        manifest.files = files;
        self.write_json(MANIFEST, &manifest)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub seeds: Vec<u64>,
    /// Command arguments that are not part of the config.
    pub arguments: serde_json::Value,
    /// SHA-256 of every input file, keyed by file name.
    pub inputs: Vec<(String, String)>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            tool: "sparsenet",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: None,
            config: None,
            seeds: Vec::new(),
            arguments: serde_json::Value::Null,
            inputs: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn with_config(mut self, cfg: &crate::config::ExperimentConfig) -> Self {
        self.config_hash = Some(cfg.hash());
        self.config = Some(serde_json::to_value(cfg).expect("serializable config"));
        self.seeds = cfg.seeds.clone();
        self
    }

    pub fn with_input(mut self, path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.inputs.push((name, hex::encode(Sha256::digest(&bytes))));
        Ok(self)
    }
}

/// Formats an optional float for CSV; empty when absent.
pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}
