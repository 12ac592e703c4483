//! Per-run manifest: parameters of every stage and SHA-256 of every input
//! and output file. No timestamps, so identical runs give identical bytes.

use std::io::Read;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use twofive_core::PathContext;

use crate::config::PipelineConfig;
use crate::error::{CliError, StageResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub summary: Value,
}

pub fn sha256_file(path: &Path) -> Result<FileRecord, CliError> {
    let mut file = std::fs::File::open(path).at_path(path).stage("manifest")?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).at_path(path).stage("manifest")?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileRecord {
        path: path.display().to_string(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

impl Manifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Self {
            tool: "twofive",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config: config.clone(),
            stages: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn stage(&mut self, name: &str, params: Value) {
        self.stages.push(StageRecord {
            name: name.into(),
            params,
        });
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(twofive_core::Error::from)
            .stage("manifest")?;
        text.push('\n');
        std::fs::write(path, text).at_path(path).stage("manifest")
    }
}
