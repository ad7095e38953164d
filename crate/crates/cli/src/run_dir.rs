//! Run directories: the resolved config, dataset hash and seeds of an
//! experiment, next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use epf::{EpfError, Result};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "run.json";

fn io(path: &Path, source: std::io::Error) -> EpfError {
    EpfError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Creates (or reopens) the run directory of `cfg`.
///
/// Reopening is only allowed with an identical resolved config and an
/// unchanged dataset, so resumed outputs never mix two experiments.
pub fn prepare(cfg: &ExperimentConfig, dataset_hash: &str) -> Result<PathBuf> {
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    let rendered = cfg.render();
    if config_path.exists() {
        let existing = fs::read_to_string(&config_path).map_err(|e| io(&config_path, e))?;
        if existing != rendered {
            return Err(EpfError::Config(format!(
                "run directory {} holds a different configuration; choose another output",
                dir.display()
            )));
        }
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    if let Some(previous) = read_manifest(&dir)? {
        let recorded = previous["dataset_hash"].as_str().unwrap_or_default();
        if recorded != dataset_hash {
            return Err(EpfError::Checksum {
                path: cfg.dataset.clone(),
                expected: recorded.to_string(),
                actual: dataset_hash.to_string(),
            });
        }
    }
    fs::write(&config_path, &rendered).map_err(|e| io(&config_path, e))?;
    let manifest = json!({
        "epf_version": env!("CARGO_PKG_VERSION"),
        "market": cfg.market,
        "dataset": cfg.dataset,
        "dataset_hash": dataset_hash,
        "seeds": cfg.seeds,
    });
    write_json(&manifest_path, &manifest)?;
    Ok(dir)
}

/// Adds `key` to the run manifest (e.g. the hyperparameter files used).
pub fn record(dir: &Path, key: &str, value: Value) -> Result<()> {
    let mut manifest = read_manifest(dir)?.unwrap_or_else(|| json!({}));
    manifest[key] = value;
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Option<Value>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| io(path, e))
}
