//! Flat run configuration: every tunable block plus the seed, overridable
//! from a JSON file. Unknown keys are rejected so typos fail loudly.

use std::path::Path;

use anyhow::{Context, Result};
use gridnav_core::deadreckon::ReckonConfig;
use gridnav_core::occmetrics::LossWeights;
use gridnav_core::planner::PlannerConfig;
use gridnav_core::sim::SceneParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneParams,
    pub planner: PlannerConfig,
    pub reckon: ReckonConfig,
    pub loss_weights: LossWeights,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
