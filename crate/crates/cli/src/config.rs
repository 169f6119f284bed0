//! Optional TOML config file; command-line flags override these values.

use std::path::Path;

use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub iterations: Option<u64>,
    pub sh_degree: Option<usize>,
    pub downsample: Option<u32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: Option<bool>,
    pub normalize_scene: Option<bool>,
    pub holdout_every: Option<usize>,
    pub eval_interval: Option<u64>,
    pub background: Option<[f64; 3]>,
    pub histogram_iterations: Option<Vec<u64>>,

    // Loss
    pub lambda_ssim: Option<f64>,
    pub ssim_window: Option<usize>,
    pub ssim_sigma: Option<f64>,

    // Density control
    pub densify_interval: Option<u64>,
    pub densify_start: Option<u64>,
    pub densify_stop: Option<u64>,
    pub grad_threshold: Option<f64>,
    /// Absolute world units; when absent the default is 1% of the scene extent.
    pub clone_vs_split_scale: Option<f64>,
    pub volume_threshold: Option<f64>,
    pub prune_opacity: Option<f64>,
    pub opacity_reset_interval: Option<u64>,
    pub max_gaussians: Option<usize>,
    pub enable_volumetric: Option<bool>,
    pub volumetric_after_stop: Option<bool>,
    /// "mean" or "sum".
    pub grad_signal: Option<String>,
    /// "inherit" or "halved".
    pub split_opacity: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }
}
