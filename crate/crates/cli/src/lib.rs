//! Scenario runner for the nonlocal comparison library: strict JSON
//! configs, solve/verify pipelines, refinement sweeps.

pub mod config;
pub mod pipeline;
pub mod sweep;

pub use config::{parse_config, ScenarioConfig};
pub use pipeline::{run_scenario, Mode};
pub use sweep::refine_sweep;
