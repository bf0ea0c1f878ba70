//! Deterministic synthetic scenes with injected anomalies.

mod config;
mod motion;
pub mod presets;
mod render;

pub use config::{AgentSpec, AnomalyKind, AnomalySpec, Region, RenderConfig, ScenarioConfig, SceneLayout};
pub use motion::{generate_scenario, AgentState, Scenario};
pub use render::{paint_mask, render_dataset, segmentation_mask};

use crate::dataset::VideoData;
use crate::error::Result;

pub fn synthesize(cfg: &ScenarioConfig) -> Result<VideoData> {
    render_dataset(&generate_scenario(cfg)?, cfg)
}
