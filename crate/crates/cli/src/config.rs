//! Optional config file: defaults for fitting, gait and OKS settings.
//! Flags always win over the file; the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "MOUSELIFT_CONFIG";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub gait: GaitSection,
    #[serde(default)]
    pub oks: OksSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub lambda: Option<f64>,
    pub distance_mm: Option<f64>,
    pub max_iterations: Option<usize>,
    pub restarts: Option<usize>,
    pub visibility_threshold: Option<f64>,
    pub step_tolerance: Option<f64>,
    pub objective_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitSection {
    pub belt_speed_cm_s: Option<f64>,
    pub outlier_sigma: Option<f64>,
    pub axis: Option<String>,
    pub joint: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OksSection {
    pub falloff: Option<f64>,
    pub thresholds: Option<Vec<f64>>,
}

impl FileConfig {
    /// Loads `--config`, else `$MOUSELIFT_CONFIG`, else empty defaults.
    pub fn load(explicit: Option<&Path>) -> anyhow::Result<FileConfig> {
        let path: Option<PathBuf> = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
        };
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}
