//! Run manifests written next to each command's primary output.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{input, CliError};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Digest of `config` as serialized here.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub template_version: u32,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = std::fs::File::open(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn digests<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<Vec<FileDigest>, CliError> {
    paths
        .into_iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// `<output>.manifest.json`
pub fn path_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Collects what a command read and how it was configured, then writes the
/// manifest once its outputs exist.
pub struct Recorder {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    template_version: u32,
    inputs: Vec<PathBuf>,
    started_at: String,
}

impl Recorder {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Recorder {
            command: command.to_string(),
            config,
            seed,
            template_version: dialparse::engine::PROMPT_TEMPLATE_VERSION,
            inputs: Vec::new(),
            started_at: now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn finish(self, primary: &Path, outputs: &[&Path]) -> Result<(), CliError> {
        let config_sha256 = hex::encode(Sha256::digest(self.config.to_string().as_bytes()));
        let manifest = Manifest {
            tool: "dialparse",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config_sha256,
            config: self.config,
            inputs: digests(self.inputs.iter().map(PathBuf::as_path))?,
            outputs: digests(outputs.iter().copied())?,
            seed: self.seed,
            template_version: self.template_version,
            started_at: self.started_at,
            finished_at: now(),
        };
        let path = path_for(primary);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
    }
}
