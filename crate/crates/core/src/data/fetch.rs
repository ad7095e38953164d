//! Download client for the open-access benchmark dataset files.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use tracing::{debug, info};

use super::Market;
use crate::{EpfError, Result};

/// Environment variable overriding the default cache location.
pub const CACHE_DIR_ENV: &str = "EPF_CACHE_DIR";

const BUNDLED_MANIFEST: &str = include_str!("../../manifest/datasets.manifest");

/// Download location and optional SHA-256 checksum per market.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, (String, Option<String>)>,
}

impl Manifest {
    /// The manifest shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_str(BUNDLED_MANIFEST).expect("bundled manifest is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EpfError::io(path, e))?;
        text.parse()
    }

    pub fn url(&self, market_id: &str) -> Option<&str> {
        self.entries.get(market_id).map(|(u, _)| u.as_str())
    }

    pub fn sha256(&self, market_id: &str) -> Option<&str> {
        self.entries.get(market_id).and_then(|(_, s)| s.as_deref())
    }

    pub fn with_entry(mut self, market_id: &str, url: &str, sha256: Option<&str>) -> Self {
        self.entries.insert(
            market_id.to_string(),
            (url.to_string(), sha256.map(str::to_ascii_lowercase)),
        );
        self
    }
}

impl FromStr for Manifest {
    type Err = EpfError;

    fn from_str(text: &str) -> Result<Self> {
        let mut urls = BTreeMap::new();
        let mut sums = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| EpfError::Parse {
                line: i + 1,
                message: format!("expected key=value, found '{line}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "version" {
                if value != "1" {
                    return Err(EpfError::Config(format!("unsupported manifest version {value}")));
                }
                continue;
            }
            match key.rsplit_once('.') {
                Some((market, "url")) => {
                    urls.insert(market.to_string(), value.to_string());
                }
                Some((market, "sha256")) => {
                    if !value.is_empty() {
                        sums.insert(market.to_string(), value.to_ascii_lowercase());
                    }
                }
                _ => {
                    return Err(EpfError::Parse {
                        line: i + 1,
                        message: format!("unknown manifest key '{key}'"),
                    })
                }
            }
        }
        let entries = urls
            .into_iter()
            .map(|(m, u)| {
                let sum = sums.remove(&m);
                (m, (u, sum))
            })
            .collect();
        Ok(Self { entries })
    }
}

/// Cache directory: explicit path, else `$EPF_CACHE_DIR`, else `./datasets`.
pub fn resolve_cache_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("datasets"),
    }
}

/// Returns the cached dataset file for `market_id`, downloading it on first use.
pub fn fetch_dataset(market_id: &str, cache_dir: &Path) -> Result<PathBuf> {
    fetch_dataset_with(&Manifest::bundled(), market_id, cache_dir)
}

/// [`fetch_dataset`] against a caller-supplied manifest.
pub fn fetch_dataset_with(manifest: &Manifest, market_id: &str, cache_dir: &Path) -> Result<PathBuf> {
    let market = Market::from_str(market_id)?;
    let id = market.id();
    let url = manifest
        .url(id)
        .ok_or_else(|| EpfError::Config(format!("manifest has no URL for market {id}")))?;
    fs::create_dir_all(cache_dir).map_err(|e| EpfError::io(cache_dir, e))?;

    let lock_path = cache_dir.join(format!("{id}.lock"));
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| EpfError::io(&lock_path, e))?;
    lock.lock().map_err(|e| EpfError::io(&lock_path, e))?;

    let target = cache_dir.join(format!("{id}.csv"));
    let expected = manifest.sha256(id);
    if target.exists() {
        match expected {
            Some(sum) if file_sha256(&target)? != sum => {
                debug!(path = %target.display(), "cached file fails checksum, refetching");
            }
            _ => {
                debug!(path = %target.display(), "dataset cache hit");
                return Ok(target);
            }
        }
    }

    info!(market = id, url, "downloading dataset");
    let partial = cache_dir.join(format!("{id}.csv.part"));
    download(url, &partial)?;
    if let Some(sum) = expected {
        let actual = file_sha256(&partial)?;
        if actual != sum {
            let _ = fs::remove_file(&partial);
            return Err(EpfError::Checksum {
                path: target,
                expected: sum.to_string(),
                actual,
            });
        }
    }
    fs::rename(&partial, &target).map_err(|e| EpfError::io(&target, e))?;
    Ok(target)
}

fn download(url: &str, dest: &Path) -> Result<()> {
    let transport = |status: String| EpfError::Transport {
        url: url.to_string(),
        status,
    };
    let mut response = ureq::get(url).call().map_err(|e| match e {
        ureq::Error::StatusCode(code) => transport(format!("HTTP {code}")),
        other => transport(other.to_string()),
    })?;
    let file = File::create(dest).map_err(|e| EpfError::io(dest, e))?;
    let mut out = BufWriter::new(file);
    let mut body = response.body_mut().as_reader();
    io::copy(&mut body, &mut out).map_err(|e| transport(format!("reading body: {e}")))?;
    out.flush().map_err(|e| EpfError::io(dest, e))?;
    Ok(())
}

/// Lowercase hex SHA-256 of a file.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| EpfError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| EpfError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Git-style content id of a file: SHA-256 over `blob <len>\0<bytes>`, the
/// object id `git hash-object` reports in a SHA-256 repository.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| EpfError::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}
