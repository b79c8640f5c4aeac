//! Machine-readable run manifest written next to every subcommand's outputs.
//!
//! Re-runs on identical inputs reproduce primary outputs byte-for-byte; the
//! manifest is the one file allowed to differ, and only in `created_utc`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub records: usize,
    pub skipped: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub created_utc: String,
    pub inputs: Vec<InputRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub counts: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            tool: "spoofscope",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_owned(),
            created_utc: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            inputs: Vec::new(),
            thresholds: None,
            seed: None,
            counts: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path, records: usize, skipped: usize) {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            records,
            skipped,
        });
    }

    pub fn count(&mut self, key: &str, value: u64) {
        self.counts.insert(key.to_owned(), value);
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(out_dir.join("run_manifest.json"), text)
    }
}
