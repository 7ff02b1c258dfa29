use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PhaseKind;
use crate::digest::sha256_hex;
use crate::error::Result;
use crate::lam::CodebookStats;
use crate::util::write_atomic;

/// One record per optimizer step, serialized as a JSON line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: u64,
    pub phase_kind: PhaseKind,
    pub lr: f32,
    pub loss_total: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_flow: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_recon: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_vq: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_commit: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codebook: Option<CodebookStats>,
    pub collapse_alarm: bool,
    /// Seconds since phase start. Excluded from the content digest so
    /// re-runs compare equal.
    pub wall_time: f64,
}

pub fn write_telemetry(path: &Path, records: &[TelemetryRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_telemetry(path: &Path) -> Result<Vec<TelemetryRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(line)?);
        }
    }
    Ok(out)
}

/// Content digest over the records with wall_time zeroed, so byte-identical
/// training runs produce identical digests regardless of timing.
pub fn telemetry_digest(records: &[TelemetryRecord]) -> String {
    let mut buf = Vec::new();
    for r in records {
        let mut canon = r.clone();
        canon.wall_time = 0.0;
        serde_json::to_writer(&mut buf, &canon).expect("telemetry serializes");
        buf.push(b'\n');
    }
    sha256_hex(&buf)
}
