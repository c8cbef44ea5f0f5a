use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

/// One command invocation that wrote into the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: serde_json::Value,
    pub seed: u64,
    pub artifacts: Vec<PathBuf>,
    pub threads: usize,
    /// Seconds since the Unix epoch.
    pub started_unix: f64,
    pub wall_seconds: f64,
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

/// The single manifest of an output directory, holding the latest record of
/// each command that wrote there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub runs: BTreeMap<String, RunRecord>,
}

impl RunManifest {
    fn empty() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            runs: BTreeMap::new(),
        }
    }

    /// Reads the directory's manifest, or starts a fresh one when it is
    /// missing or unreadable.
    pub fn load_or_new(dir: &Path) -> Self {
        fs::read_to_string(dir.join(MANIFEST_NAME))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_else(Self::empty)
    }

    pub fn record(dir: &Path, command: &str, run: RunRecord) -> std::io::Result<()> {
        let mut m = Self::load_or_new(dir);
        m.version = env!("CARGO_PKG_VERSION").to_string();
        m.runs.insert(command.to_string(), run);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_NAME), text + "\n")
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}
