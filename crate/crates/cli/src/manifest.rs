//! Reproducibility manifest written next to every run's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub cli_version: String,
    pub core_version: String,
    pub subcommand: String,
    /// Command-line arguments after the binary name; replaying re-parses these.
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub flags: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(subcommand: &str, args: Vec<String>) -> Self {
        Manifest {
            tool: "soilx".into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            core_version: soilx_core::VERSION.into(),
            subcommand: subcommand.into(),
            args,
            seeds: BTreeMap::new(),
            flags: BTreeMap::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn flag(mut self, name: &str, value: impl ToString) -> Self {
        self.flags.insert(name.into(), value.to_string());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n").with_context(|| format!("writing manifest in {}", dir.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Stored arguments with the output directory replaced by `out`.
    pub fn replay_args(&self, out: &Path) -> Vec<String> {
        let mut args = Vec::with_capacity(self.args.len() + 2);
        let mut it = self.args.iter();
        while let Some(a) = it.next() {
            if a == "--out" {
                it.next();
            } else if !a.starts_with("--out=") {
                args.push(a.clone());
            }
        }
        args.push("--out".into());
        args.push(out.display().to_string());
        args
    }
}
