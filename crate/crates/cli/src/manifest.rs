use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputRecord>,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub threads: usize,
    pub version: String,
    pub started: String,
    pub finished: String,
    /// Run summary for outputs that have no room for it, such as CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            inputs: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
            threads: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: String::new(),
            summary: None,
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    pub fn config(&mut self, config: &impl Serialize) {
        self.config = serde_json::to_value(config).expect("config serializes");
    }

    pub fn finish(&mut self) {
        self.finished = now();
    }
}

pub fn read_input(path: &Path) -> CliResult<(String, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))?;
    Ok((text, bytes))
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `body` to `out` (or stdout) and the manifest to
/// `<out>.manifest.json` (or stderr).
pub fn emit(out: Option<&Path>, body: &str, manifest: &RunManifest) -> CliResult<()> {
    let manifest_json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    match out {
        Some(path) => {
            write(path, body)?;
            write(&sidecar_path(path), &(manifest_json + "\n"))
        }
        None => {
            print!("{body}");
            eprintln!("{manifest_json}");
            Ok(())
        }
    }
}

/// A JSON document with the manifest embedded under `"manifest"`.
pub fn with_manifest(value: &impl Serialize, manifest: &RunManifest) -> String {
    let mut doc = serde_json::to_value(value).expect("report serializes");
    if let serde_json::Value::Object(map) = &mut doc {
        map.insert(
            "manifest".into(),
            serde_json::to_value(manifest).expect("manifest serializes"),
        );
    }
    serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
}
