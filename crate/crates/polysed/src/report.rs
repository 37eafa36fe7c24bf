use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::FEATURE_VERSION;
use crate::checkpoint::CHECKPOINT_VERSION;
use crate::dataset::{write_json, DATASET_FORMAT_VERSION};
use crate::error::Result;

pub const RUN_MANIFEST_FILE: &str = "run.json";

/// Written next to the outputs of every command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The invocation as typed, program name first.
    pub argv: Vec<String>,
    /// Fully resolved settings after merging the config file and flags.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub formats: BTreeMap<String, u32>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: impl Serialize) -> Self {
        let formats = [
            ("dataset", DATASET_FORMAT_VERSION),
            ("features", FEATURE_VERSION),
            ("checkpoint", CHECKPOINT_VERSION),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            formats,
            wall_seconds: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// `<dir>/<stem>.run.json` for a single output file.
pub fn manifest_path_for_file(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    file.with_file_name(format!("{stem}.run.json"))
}
