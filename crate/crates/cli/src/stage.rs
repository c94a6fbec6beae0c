//! Stage directories, config echoes and the hash check that makes reruns
//! of an unchanged stage a no-op.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::user;

pub const ECHO_FILE: &str = "echo.json";

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance written into every stage directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub stage: String,
    pub tool: String,
    /// Hash over the stage name, its config and its input hashes.
    pub key: String,
    pub config: serde_json::Value,
    /// Full resolved run configuration.
    pub run: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Stage {
    pub name: &'static str,
    pub dir: PathBuf,
    key: String,
    config: serde_json::Value,
    run: serde_json::Value,
    inputs: BTreeMap<String, String>,
}

impl Stage {
    pub fn begin(
        root: &Path,
        name: &'static str,
        config: &impl Serialize,
        run: &impl Serialize,
        inputs: &[PathBuf],
    ) -> Result<Stage> {
        let config = serde_json::to_value(config)?;
        let mut hashed = BTreeMap::new();
        for p in inputs {
            if !p.exists() {
                return Err(user(format!(
                    "{name}: missing input {} (run the earlier stage first or pass its path)",
                    p.display()
                )));
            }
            hashed.insert(p.display().to_string(), file_hash(p)?);
        }
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update(serde_json::to_vec(&config)?);
        for (p, v) in &hashed {
            h.update(p.as_bytes());
            h.update(v.as_bytes());
        }
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Stage {
            name,
            dir,
            key: hex::encode(h.finalize()),
            config,
            run: serde_json::to_value(run)?,
            inputs: hashed,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// True when a previous run with the same key left every output intact.
    pub fn up_to_date(&self) -> bool {
        let Ok(text) = std::fs::read_to_string(self.path(ECHO_FILE)) else {
            return false;
        };
        let Ok(echo) = serde_json::from_str::<Echo>(&text) else {
            return false;
        };
        echo.key == self.key
            && !echo.outputs.is_empty()
            && echo
                .outputs
                .iter()
                .all(|(f, h)| file_hash(&self.path(f)).map(|x| &x == h).unwrap_or(false))
    }

    /// Records hashes of every file now in the stage directory.
    pub fn finish(self) -> Result<()> {
        let mut outputs = BTreeMap::new();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != ECHO_FILE))
            .collect();
        files.sort();
        for p in files {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            outputs.insert(name, file_hash(&p)?);
        }
        let dir = self.dir.clone();
        let echo = Echo {
            stage: self.name.to_string(),
            tool: format!("cse {}", env!("CARGO_PKG_VERSION")),
            key: self.key,
            config: self.config,
            run: self.run,
            inputs: self.inputs,
            outputs,
        };
        let text = serde_json::to_string_pretty(&echo)?;
        std::fs::write(dir.join(ECHO_FILE), text + "\n")?;
        Ok(())
    }

    /// Removes earlier outputs so stale files never reach the echo.
    pub fn clear(&self) -> Result<()> {
        for e in std::fs::read_dir(&self.dir)? {
            let p = e?.path();
            if p.is_file() {
                std::fs::remove_file(&p)?;
            }
        }
        Ok(())
    }
}
