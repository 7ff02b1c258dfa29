use serde::{Deserialize, Serialize};

use crate::lam::CodebookStats;

/// One method's evaluation row in the comparison grid.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
    /// SSIM scaled x100 for compact display.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_x100: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_l1: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_baseline_l1: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_codebook: Option<CodebookStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse_alarm: Option<bool>,
    /// Present but unevaluated checkpoints are listed as absent, not failures.
    pub absent: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config_digest: String,
    pub env_digest: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<MethodRow>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(config_digest: String, env_digest: String, seeds: Vec<u64>) -> Self {
        Self { schema_version: 1, config_digest, env_digest, seeds, rows: Vec::new(), notes: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VideoMetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub ssim_x100: f64,
    pub per_episode_psnr: Vec<f64>,
    pub per_episode_ssim: Vec<f64>,
}
