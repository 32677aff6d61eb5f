//! Report and manifest files.
//!
//! Reports hold only values computed from inputs and seeds, so reruns with
//! the same arguments produce identical bytes. Wall-clock times live in the
//! manifest next to them.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{LabError, LabResult};

pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report values serialize");
    text.push('\n');
    text
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    std::fs::write(path, to_json_string(value)).map_err(|e| LabError::io(path, e))
}

pub fn unix_millis() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Directory receiving one subcommand's artifacts.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<String>,
}

impl OutputDir {
    pub fn create(base: &Path, subcommand: &str) -> LabResult<Self> {
        let root = base.join(subcommand);
        std::fs::create_dir_all(&root).map_err(|e| LabError::io(&root, e))?;
        Ok(Self { root, artifacts: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for a named artifact, recorded for the manifest.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub out_dir: String,
    /// Fully resolved parameters, enough to rerun the subcommand.
    pub parameters: serde_json::Value,
    pub artifacts: Vec<String>,
    pub passed: bool,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportEnvelope<'a, T: Serialize> {
    pub subcommand: &'a str,
    pub manifest: &'static str,
    pub passed: bool,
    pub failures: &'a [String],
    pub result: &'a T,
}
