use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

const ARTIFACT_MAGIC: &[u8; 8] = b"HDBNARTF";
pub const ARTIFACT_VERSION: u32 = 1;

/// A value tagged with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    pub value: T,
}

/// Write-once output directory bound to one configuration. Rewriting an
/// artifact with identical bytes is a no-op; different bytes are refused.
#[derive(Clone, Debug)]
pub struct ArtifactDir {
    root: PathBuf,
    config_hash: String,
    seed: u64,
}

impl ArtifactDir {
    /// Create or reopen `cfg.output`. A directory first opened under a
    /// different configuration is rejected.
    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        let root = cfg.output.clone();
        std::fs::create_dir_all(&root)?;
        let hash = cfg.hash();
        let cfg_path = root.join("config.txt");
        if cfg_path.exists() {
            let existing = ExperimentConfig::load(&cfg_path)?;
            if existing.hash() != hash {
                return Err(Error::ConfigMismatch {
                    path: cfg_path,
                    expected: hash,
                    found: existing.hash(),
                });
            }
        } else {
            write_atomic(&cfg_path, cfg.to_text().as_bytes())?;
        }
        Ok(Self {
            root,
            config_hash: hash,
            seed: cfg.seed,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            if std::fs::read(&path)? == bytes {
                return Ok(path);
            }
            return Err(Error::ArtifactExists { path });
        }
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    /// Let `fill` write a file, then store it under `name` write-once.
    pub fn write_with(&self, name: &str, fill: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let tmp = tempfile::Builder::new().prefix(".pending-").tempfile_in(&self.root)?;
        fill(tmp.path())?;
        let bytes = std::fs::read(tmp.path())?;
        self.write(name, &bytes)
    }

    fn stamp<T>(&self, value: T) -> Stamped<T> {
        Stamped {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            value,
        }
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(&self.stamp(value))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_bin<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let bytes = crate::persist::encode(ARTIFACT_MAGIC, ARTIFACT_VERSION, &self.stamp(value))?;
        self.write(name, &bytes)
    }

    fn require(&self, name: &str, hint: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                hint: hint.to_string(),
            });
        }
        Ok(path)
    }

    fn check<T>(&self, path: PathBuf, stamped: Stamped<T>) -> Result<T> {
        if stamped.config_hash != self.config_hash || stamped.seed != self.seed {
            return Err(Error::ConfigMismatch {
                path,
                expected: format!("{} seed {}", self.config_hash, self.seed),
                found: format!("{} seed {}", stamped.config_hash, stamped.seed),
            });
        }
        Ok(stamped.value)
    }

    /// Read a stamped JSON artifact; `hint` tells the user how to produce it.
    pub fn read_json<T: DeserializeOwned>(&self, name: &str, hint: &str) -> Result<T> {
        let path = self.require(name, hint)?;
        let stamped: Stamped<T> = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        self.check(path, stamped)
    }

    pub fn read_bin<T: DeserializeOwned>(&self, name: &str, hint: &str) -> Result<T> {
        let path = self.require(name, hint)?;
        let stamped: Stamped<T> = crate::persist::load(&path, ARTIFACT_MAGIC, ARTIFACT_VERSION)?;
        self.check(path, stamped)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new().prefix(".pending-").tempfile_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
