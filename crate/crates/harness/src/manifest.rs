//! Run manifests: the resolved config plus hashes of every input and output,
//! written as `manifest.toml` next to the outputs. Passing a manifest back
//! as `--config` replays the run.

use crate::config::RunConfig;
use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use toml::{Table, Value};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Files under `dir`, relative and `/`-separated, sorted. The manifest
/// itself is skipped at the top level.
pub fn list_outputs(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                out.push(
                    rel.components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                );
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.retain(|p| p != MANIFEST_FILE);
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    /// `(path, sha256)` of files the run read.
    pub inputs: Vec<(String, String)>,
    /// `(relative path, sha256)` of files the run wrote.
    pub outputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn collect(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), hash_file(p)?)))
            .collect::<Result<_>>()?;
        let outputs = list_outputs(out)?
            .into_iter()
            .map(|rel| Ok((rel.clone(), hash_file(&out.join(&rel))?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            inputs,
            outputs,
        })
    }

    pub fn to_toml(&self) -> String {
        let hashes = |v: &[(String, String)]| {
            Value::Table(v.iter().map(|(k, h)| (k.clone(), Value::String(h.clone()))).collect())
        };
        let mut m = Table::new();
        m.insert("version".into(), Value::String(self.version.clone()));
        m.insert("experiment".into(), Value::String(self.config.experiment.name().into()));
        m.insert("seed".into(), Value::Integer(self.config.seed as i64));
        m.insert("inputs".into(), hashes(&self.inputs));
        m.insert("outputs".into(), hashes(&self.outputs));
        let mut doc = Table::new();
        doc.insert("manifest".into(), Value::Table(m));
        doc.insert("config".into(), Value::Table(self.config.to_table()));
        toml::to_string(&doc).expect("manifest tables always serialize")
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Output hashes recorded in a manifest file.
    pub fn read_outputs(path: &Path) -> Result<Vec<(String, String)>> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        let outputs = doc
            .get("manifest")
            .and_then(|m| m.get("outputs"))
            .and_then(Value::as_table)
            .with_context(|| format!("{} has no [manifest.outputs]", path.display()))?;
        Ok(outputs
            .iter()
            .map(|(k, v)| (k.clone(), v.as_str().unwrap_or_default().to_string()))
            .collect())
    }
}
