//! Run configuration: JSON file merged with command-line overrides.
//!
//! The config file holds everything reproducible (dataset root, backend
//! definitions, scenario selections, cassette path); credentials only ever
//! come from the environment variables the backend entries name.

use linkgrade_core::gateway::{BackendConfig, MockRule};
use linkgrade_core::prompt::Scenario;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    #[serde(default)]
    pub record: bool,
    #[serde(default)]
    pub propagate: bool,
    #[serde(default)]
    pub impute_failures: bool,
    #[serde(default)]
    pub parallelism: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        Ok(config)
    }

    /// Backends always available without any config file.
    pub fn builtin_backends() -> Vec<BackendConfig> {
        vec![
            BackendConfig::mock("mock-echo", MockRule::EchoTruth),
            BackendConfig::mock("mock-truth-plus-one", MockRule::TruthPlusOneClip5),
            BackendConfig::mock("mock-boxed", MockRule::BoxedTruth),
        ]
    }

    /// All known backends: the config file's plus the built-ins (config
    /// entries win on id clashes).
    pub fn all_backends(&self) -> Vec<BackendConfig> {
        let mut backends = self.backends.clone();
        for builtin in Self::builtin_backends() {
            if !backends.iter().any(|b| b.backend_id == builtin.backend_id) {
                backends.push(builtin);
            }
        }
        backends
    }

    pub fn find_backend(&self, id: &str) -> Option<BackendConfig> {
        self.all_backends().into_iter().find(|b| b.backend_id == id)
    }
}
