use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{stage, StreamFactory};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Outcome of one pass/fail comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// A named output file and its full contents.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFile {
    pub name: String,
    pub contents: String,
}

impl ReportFile {
    /// CSV from a header and pre-formatted rows.
    pub fn csv(name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Self {
        let mut contents = header.join(",");
        contents.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            contents.push_str(&row.join(","));
            contents.push('\n');
        }
        Self {
            name: name.to_string(),
            contents,
        }
    }
}

/// Results that can be written as report files and checked.
pub trait Outcome {
    fn files(&self) -> Vec<ReportFile>;
    fn checks(&self) -> &[Check];

    fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

/// Float cell with 17 significant digits.
pub(crate) fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub toolkit_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seed: u64,
    /// Key of every stage's stream family, hex encoded.
    pub stage_seeds: BTreeMap<String, String>,
    pub config: serde_json::Value,
    /// SHA-256 of every emitted file.
    pub checksums: BTreeMap<String, String>,
    pub checks: Vec<Check>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        let factory = StreamFactory::new(seed);
        let stage_seeds = [
            ("paths", stage::PATHS),
            ("limit", stage::LIMIT),
            ("oracle", stage::ORACLE),
            ("lnd", stage::LND),
            ("bandwidth", stage::BANDWIDTH),
            ("control", stage::CONTROL),
        ]
        .into_iter()
        .map(|(name, s)| (name.to_string(), format!("{:016x}", factory.stage_key(s))))
        .collect();
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            command: command.to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            timestamp,
            seed,
            stage_seeds,
            config: serde_json::to_value(config)?,
            checksums: BTreeMap::new(),
            checks: Vec::new(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write every file into `dir`, record checksums and checks in the manifest
/// and write `manifest.json` last.
pub fn emit_report(dir: &Path, files: &[ReportFile], checks: &[Check], mut manifest: Manifest) -> Result<Manifest> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    for file in files {
        std::fs::write(dir.join(&file.name), &file.contents)?;
        manifest
            .checksums
            .insert(file.name.clone(), sha256_hex(file.contents.as_bytes()));
    }
    manifest.checks = checks.to_vec();
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_checksums() {
        let f = ReportFile::csv("x.csv", &["a", "b"], vec![vec![num(1.0), num(0.1)]]);
        assert_eq!(f.contents, "a,b\n1.0000000000000000e0,1.0000000000000001e-1\n");
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new("test", 7, &serde_json::json!({"k": 1})).unwrap();
        let m = emit_report(dir.path(), &[f.clone()], &[], m).unwrap();
        assert_eq!(m.checksums["x.csv"], sha256_hex(f.contents.as_bytes()));
        let written: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(written["config"], serde_json::json!({"k": 1}));
        assert_eq!(written["seed"], 7);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
