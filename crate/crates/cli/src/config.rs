//! The TOML run configuration. Every key is optional; command-line flags
//! take precedence over the file.

use std::path::Path;

use dialparse::backend::ApiKind;
use dialparse::engine::ContextMode;
use serde::{Deserialize, Serialize};

use crate::error::{config, CliError};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// `oracle`, `noisy` or `remote`.
    pub kind: Option<String>,
    pub url: Option<String>,
    pub model: Option<String>,
    pub auth_env: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_attempts: Option<u32>,
    pub concurrency: Option<usize>,
    pub backoff_base_ms: Option<u64>,
    pub backoff_max_ms: Option<u64>,
    pub api: Option<ApiKind>,
    pub p_drop: Option<f64>,
    pub p_relabel: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub mode: Option<ContextMode>,
    pub window: Option<usize>,
    pub max_new_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub stop: Option<Vec<String>>,
    pub parallelism: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub cutoff: Option<usize>,
    /// `label:max_distance` entries.
    pub breakdown: Option<Vec<String>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config(format!("{}: {}", path.display(), e.message())))
    }
}
