//! Optional defaults file (`--config`, or `SPATIALGEN_CONFIG`). Flags given on
//! the command line take precedence over values read here.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub vocab: Option<String>,
    pub annotations: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub containment_tolerance: Option<f64>,
    pub sampler: SamplerDefaults,
    pub eval: EvalDefaults,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerDefaults {
    pub k: Option<usize>,
    pub max_iter: Option<usize>,
    pub flip_probability: Option<f64>,
    pub crop_scale_min: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalDefaults {
    pub threshold: Option<f64>,
    pub images_per_caption: Option<usize>,
    pub pairing: Option<String>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| spatialgen::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if let Some(p) = &cfg.annotations {
            if !p.exists() {
                return Err(spatialgen::Error::InvalidConfig(format!(
                    "{}: annotations path {} does not exist",
                    path.display(),
                    p.display()
                ))
                .into());
            }
        }
        Ok(cfg)
    }
}
