use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST: &str = "manifest.json";
const DEFAULT_OUT: &str = "scolab-out";

/// --out, then the config file's `output`, then $SCOLAB_OUT, then ./scolab-out.
pub fn resolve_out(flag: Option<&Path>, from_config: Option<&str>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = from_config {
        return PathBuf::from(p);
    }
    match std::env::var_os("SCOLAB_OUT") {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

/// Config echo, tool version and seeds, written beside every run's outputs.
/// Contains nothing time- or host-dependent so reruns are byte-identical.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<&'static str, u64>,
    pub outputs: Vec<String>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: impl Serialize) -> Result<Self> {
        Ok(Manifest {
            tool: "scolab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn seed(mut self, name: &'static str, value: u64) -> Self {
        self.seeds.insert(name, value);
        self
    }

    pub fn write(mut self, dir: &Path, outputs: &[&Path]) -> Result<()> {
        self.outputs = outputs
            .iter()
            .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
            .collect();
        write_json(dir, MANIFEST, &self)?;
        Ok(())
    }
}

pub fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf> {
    write_text(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn write_text(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}
