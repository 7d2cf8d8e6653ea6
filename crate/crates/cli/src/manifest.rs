use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// What a command read and wrote, with enough to re-run it. No timestamps,
/// so identical runs give identical manifests.
#[derive(Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Recorder<'a> {
    cfg: &'a RunConfig,
    command: &'a str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Recorder<'a> {
    pub fn new(cfg: &'a RunConfig, command: &'a str) -> Self {
        Recorder {
            cfg,
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    /// Writes `<out>/manifest_<command>.json`.
    pub fn finish(self) -> anyhow::Result<PathBuf> {
        let digest = |ps: &[PathBuf]| -> anyhow::Result<BTreeMap<String, String>> {
            ps.iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            config_hash: config_hash(self.cfg),
            config: self.cfg,
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        let path = self
            .cfg
            .out(&format!("manifest_{}.json", self.command.replace('-', "_")));
        write_json(&path, &m)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
