use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
}

/// Every file a command wrote, with the effective config.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Manifest { config: Some(cfg.clone()), ..Self::bare(command) }
    }

    pub fn bare(command: &str) -> Self {
        Manifest { command: command.into(), tool_version: env!("CARGO_PKG_VERSION").into(), config: None, files: Vec::new() }
    }

    pub fn add(&mut self, dir: &Path, name: &str, kind: &str, rows: Option<usize>) -> Result<()> {
        if !dir.join(name).is_file() {
            anyhow::bail!("declared output {} was not written", dir.join(name).display());
        }
        self.files.push(FileEntry { path: name.into(), kind: kind.into(), rows });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(dir.join("manifest.json"), s)?;
        Ok(())
    }
}
