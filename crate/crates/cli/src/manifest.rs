//! Run manifests.
//!
//! Every command writes `manifest.json` next to its outputs. The manifest
//! holds no timestamps or absolute paths, so repeating a run reproduces it
//! byte for byte.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliResult;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub threads: usize,
    /// Fully resolved command configuration, defaults included.
    pub config: Value,
    /// Files written by the run, relative to the output directory, sorted.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, threads: usize, config: Value) -> Self {
        Manifest {
            tool: "ffcount",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            threads,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(mut self, out_dir: &Path) -> CliResult<()> {
        self.outputs.sort();
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(out_dir.join("manifest.json"), text)?;
        Ok(())
    }
}
