//! `manifest.json`: seed, full configuration, tool version and the SHA-256
//! of every file a run wrote.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub config: Value,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, files: &[(String, &[u8])]) -> Self {
        Manifest {
            tool: "superito".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: cfg.experiment.label().into(),
            seed: cfg.sim.seed,
            config: serde_json::to_value(cfg).expect("config serializes"),
            files: files
                .iter()
                .map(|(name, bytes)| FileEntry {
                    name: name.clone(),
                    sha256: sha256_hex(bytes),
                    bytes: bytes.len() as u64,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest {}: {e}", path.display())))
    }

    /// Names of listed files whose bytes on disk no longer match.
    pub fn stale_files(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| std::fs::read(dir.join(&f.name)).map(|b| sha256_hex(&b) != f.sha256).unwrap_or(true))
            .map(|f| f.name.clone())
            .collect()
    }
}

/// Differences between an earlier manifest and a fresh one.
pub fn compare(old: &Manifest, new: &Manifest) -> Vec<String> {
    let mut diffs = Vec::new();
    if old.config != new.config {
        diffs.push("config".to_string());
    }
    for f in &old.files {
        match new.files.iter().find(|g| g.name == f.name) {
            None => diffs.push(format!("{} missing", f.name)),
            Some(g) if g.sha256 != f.sha256 => diffs.push(format!("{} hash", f.name)),
            Some(_) => {}
        }
    }
    for g in &new.files {
        if !old.files.iter().any(|f| f.name == g.name) {
            diffs.push(format!("{} unlisted", g.name));
        }
    }
    diffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn compare_flags_changes() {
        let cfg = ExperimentConfig::new(ExperimentKind::Simulate);
        let a = Manifest::new(&cfg, &[("x.csv".into(), b"1".as_slice())]);
        assert!(compare(&a, &a).is_empty());
        let b = Manifest::new(&cfg, &[("x.csv".into(), b"2".as_slice())]);
        assert_eq!(compare(&a, &b), vec!["x.csv hash".to_string()]);
        let c = Manifest::new(&cfg, &[]);
        assert_eq!(compare(&a, &c), vec!["x.csv missing".to_string()]);
    }
}
