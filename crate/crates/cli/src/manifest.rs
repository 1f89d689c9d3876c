//! Run manifests: resolved configuration plus content hashes of inputs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// SHA-256 object id in git's format: `sha256("blob <len>\0" ++ content)`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub command: String,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    pub config: Option<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self { command: command.into(), ..Self::default() }
    }

    pub fn with_config(mut self, cfg: &ExperimentConfig) -> Result<Self> {
        let text = cfg.to_toml();
        self.inputs.push(("resolved-config".into(), git_blob_hash(text.as_bytes())));
        if cfg.dataset != "synthetic" {
            let bytes = std::fs::read(&cfg.dataset).with_context(|| format!("hashing {}", cfg.dataset))?;
            self.inputs.push((cfg.dataset.clone(), git_blob_hash(&bytes)));
        }
        self.config = Some(text);
        Ok(self)
    }

    pub fn input_file(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        self.inputs.push((path.display().to_string(), git_blob_hash(&bytes)));
        Ok(self)
    }

    pub fn output(&mut self, name: &str, content: &[u8]) {
        self.outputs.push((name.into(), git_blob_hash(content)));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# dfl run manifest");
        let _ = writeln!(out, "command = {:?}", self.command);
        let _ = writeln!(out, "version = {:?}", env!("CARGO_PKG_VERSION"));
        for (name, hash) in &self.inputs {
            let _ = writeln!(out, "input {name} sha256:{hash}");
        }
        for (name, hash) in &self.outputs {
            let _ = writeln!(out, "output {name} sha256:{hash}");
        }
        if let Some(c) = &self.config {
            let _ = writeln!(out, "\n[config]\n{c}");
        }
        out
    }
}
