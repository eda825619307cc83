//! Deterministic synthetic labelled-flow generator: diurnal background,
//! injected attack episodes, calibration contamination, DOS-correlated
//! TELNET echo and hidden (unlabelled) scans.

mod config;
mod generate;
mod manifest;

pub use config::{preset, Contamination, Episode, ScenarioConfig, DAY, DEFAULT_ECHO_RATE, PRESETS};
pub use generate::{generate, response_probability, Scenario};
pub use manifest::{
    interval_windows, manifest_windows, ComponentKind, ComponentManifest, Manifest, ManifestWindows,
};
