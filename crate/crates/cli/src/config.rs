//! Configuration file sections. Each section is optional and partial;
//! missing fields fall back to the built-in defaults, and command-line
//! flags are applied on top.

use std::path::{Path, PathBuf};

use paintflow_core::dataset::{PipelineConfig, SynthConfig};
use paintflow_core::diffusion::train::TrainConfig;
use paintflow_core::diffusion::{ModelConfig, SamplerConfig, ScheduleConfig};
use paintflow_core::sbr::SbrConfig;
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub stylize: Option<SbrConfig>,
    pub synth: Option<SynthConfig>,
    pub dataset: Option<PipelineConfig>,
    pub model: Option<ModelConfig>,
    pub schedule: Option<ScheduleConfig>,
    pub train: Option<TrainConfig>,
    pub sampler: Option<SamplerConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Root for default paths: `$PAINTFLOW_DATA_DIR`, else `./paintflow-data`.
pub fn data_root() -> PathBuf {
    std::env::var_os("PAINTFLOW_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("paintflow-data"))
}
