//! Config-file loading and resolved-config snapshots.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use treecon::lsystem::LSystemSpec;
use treecon::metrics::MetricsConfig;
use treecon::train::TrainConfig;
use treecon::{Error, Result};

/// Values a config file may set. Every section is optional; command-line
/// flags override whatever is given here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub gen: GenSection,
    pub lsystem: Option<LSystemSpec>,
    pub train: Option<TrainConfig>,
    pub val_fraction: Option<f64>,
    pub metrics: Option<MetricsConfig>,
    pub gradcheck_instances: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub count: Option<usize>,
    pub first: Option<usize>,
    pub render: Option<bool>,
    pub resample_px: Option<f64>,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a JSON document, naming `path` in schema errors.
pub fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        field: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => parse_json(p, &read_text(p)?),
        None => Ok(FileConfig::default()),
    }
}

/// Writes `out/config.<command>.json`. Thread count is left out so that
/// snapshots do not depend on it.
pub fn snapshot<T: Serialize>(out: &Path, command: &str, resolved: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(resolved).expect("serialization is infallible");
    write_bytes(&out.join(format!("config.{command}.json")), text + "\n")
}
