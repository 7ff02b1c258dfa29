//! Phase-schedule engine: every training regime with its enforced
//! gradient-flow contract, codebook telemetry, and collapse detection.

mod collapse;
mod crop;
mod runner;
mod telemetry;

pub use collapse::{CollapseAlarm, CollapseConfig, CollapseDetector};
pub use crop::{center_crop, center_crop_frame, crop_window, random_crop};
pub use runner::{run_phase, Models, PhaseOutcome, RunPhaseArgs};
pub use telemetry::{read_telemetry, telemetry_digest, write_telemetry, TelemetryRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GROUP_IDM: &str = "idm";
pub const GROUP_QUANTIZER: &str = "quantizer";
pub const GROUP_FDM: &str = "fdm";
pub const GROUP_WM_BACKBONE: &str = "wm_backbone";
pub const GROUP_WM_ACTION_COND: &str = "wm_action_cond";

pub const ALL_GROUPS: [&str; 5] =
    [GROUP_IDM, GROUP_QUANTIZER, GROUP_FDM, GROUP_WM_BACKBONE, GROUP_WM_ACTION_COND];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    PretrainWm,
    TwoStageLam,
    TwoStageWm,
    NaiveJoint,
    Warmup,
    JointE2e,
    AblatePureWarmup,
    AblateFrozenLam,
}

impl PhaseKind {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown phase kind `{s}`")))
    }

    pub fn name(&self) -> String {
        match serde_json::to_value(self).expect("phase kind serializes") {
            serde_json::Value::String(s) => s,
            _ => unreachable!(),
        }
    }

    /// Collapse is the expected outcome only for the naive-joint arm; any
    /// other phase treats a sustained alarm as a contract violation.
    pub fn allows_collapse(&self) -> bool {
        matches!(self, PhaseKind::NaiveJoint)
    }

    /// Phases that optimize the world model's flow objective.
    pub fn uses_world_model(&self) -> bool {
        !matches!(self, PhaseKind::TwoStageLam)
    }

    /// Phases whose conditioning comes from the LAM encoder (rather than the
    /// all-null sequence of action-free pre-training).
    pub fn uses_latent_actions(&self) -> bool {
        !matches!(self, PhaseKind::PretrainWm | PhaseKind::TwoStageLam)
    }
}

/// Which parameter groups receive optimizer updates in a phase. Gradients
/// still flow *through* frozen groups; they are just never applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    trainable: Vec<&'static str>,
}

impl FreezeMask {
    pub fn is_trainable(&self, group: &str) -> bool {
        self.trainable.contains(&group)
    }

    pub fn trainable_groups(&self) -> &[&'static str] {
        &self.trainable
    }

    pub fn frozen_groups(&self) -> Vec<&'static str> {
        ALL_GROUPS.iter().copied().filter(|g| !self.is_trainable(g)).collect()
    }
}

pub fn freeze_mask(kind: PhaseKind) -> FreezeMask {
    let trainable: Vec<&'static str> = match kind {
        PhaseKind::PretrainWm => vec![GROUP_WM_BACKBONE],
        PhaseKind::TwoStageLam => vec![GROUP_IDM, GROUP_QUANTIZER, GROUP_FDM],
        PhaseKind::TwoStageWm => vec![GROUP_WM_BACKBONE, GROUP_WM_ACTION_COND],
        PhaseKind::NaiveJoint | PhaseKind::JointE2e => {
            vec![GROUP_IDM, GROUP_QUANTIZER, GROUP_WM_BACKBONE, GROUP_WM_ACTION_COND]
        }
        PhaseKind::Warmup | PhaseKind::AblatePureWarmup => {
            vec![GROUP_IDM, GROUP_QUANTIZER, GROUP_WM_ACTION_COND]
        }
        PhaseKind::AblateFrozenLam => vec![GROUP_WM_BACKBONE, GROUP_WM_ACTION_COND],
    };
    FreezeMask { trainable }
}

/// A named training regime: freeze mask, step budget, loss composition, and
/// telemetry plan all derive from the phase kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub phase_kind: PhaseKind,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lr_warmup_steps: usize,
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("phase steps must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("phase lr must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("phase batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Random crop augmentation is on exactly when the LAM is updating.
    pub fn augment_random_crop(&self) -> bool {
        freeze_mask(self.phase_kind).is_trainable(GROUP_IDM)
    }
}

/// Linear LR warmup to `lr`, then constant.
pub fn lr_at(step: usize, lr: f32, lr_warmup_steps: usize) -> f32 {
    if lr_warmup_steps == 0 {
        return lr;
    }
    lr * (step as f32 / lr_warmup_steps as f32).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_mask_matches_phase_table() {
        let m = freeze_mask(PhaseKind::PretrainWm);
        assert_eq!(m.trainable_groups(), &[GROUP_WM_BACKBONE]);

        let m = freeze_mask(PhaseKind::TwoStageLam);
        assert_eq!(m.trainable_groups(), &[GROUP_IDM, GROUP_QUANTIZER, GROUP_FDM]);

        // warmup keeps the backbone frozen
        let m = freeze_mask(PhaseKind::Warmup);
        assert!(!m.is_trainable(GROUP_WM_BACKBONE));
        assert!(m.is_trainable(GROUP_IDM) && m.is_trainable(GROUP_WM_ACTION_COND));

        // joint end-to-end trains all five groups except the fdm
        let m = freeze_mask(PhaseKind::JointE2e);
        assert!(!m.is_trainable(GROUP_FDM));
        for g in [GROUP_IDM, GROUP_QUANTIZER, GROUP_WM_BACKBONE, GROUP_WM_ACTION_COND] {
            assert!(m.is_trainable(g), "{g} should train in joint e2e");
        }

        // two-stage wm keeps the lam fixed
        let m = freeze_mask(PhaseKind::TwoStageWm);
        assert!(!m.is_trainable(GROUP_IDM) && !m.is_trainable(GROUP_QUANTIZER));
        assert!(m.is_trainable(GROUP_WM_BACKBONE) && m.is_trainable(GROUP_WM_ACTION_COND));

        let m = freeze_mask(PhaseKind::AblateFrozenLam);
        assert!(!m.is_trainable(GROUP_IDM) && !m.is_trainable(GROUP_QUANTIZER));
    }

    #[test]
    fn lr_warmup_schedule() {
        assert_eq!(lr_at(0, 3e-4, 200), 0.0);
        assert_eq!(lr_at(200, 3e-4, 200), 3e-4);
        assert_eq!(lr_at(100, 3e-4, 200), 1.5e-4);
        assert_eq!(lr_at(500, 3e-4, 200), 3e-4);
        assert_eq!(lr_at(0, 3e-4, 0), 3e-4);
    }

    #[test]
    fn augmentation_tracks_lam_trainability() {
        for kind in [
            PhaseKind::PretrainWm,
            PhaseKind::TwoStageLam,
            PhaseKind::TwoStageWm,
            PhaseKind::NaiveJoint,
            PhaseKind::Warmup,
            PhaseKind::JointE2e,
            PhaseKind::AblatePureWarmup,
            PhaseKind::AblateFrozenLam,
        ] {
            let pc = PhaseConfig { phase_kind: kind, steps: 1, batch_size: 1, lr: 1e-3, lr_warmup_steps: 0 };
            assert_eq!(
                pc.augment_random_crop(),
                freeze_mask(kind).is_trainable(GROUP_IDM),
                "{kind:?}"
            );
        }
    }

    #[test]
    fn phase_names_roundtrip() {
        for kind in [PhaseKind::PretrainWm, PhaseKind::JointE2e, PhaseKind::AblatePureWarmup] {
            assert_eq!(PhaseKind::parse(&kind.name()).unwrap(), kind);
        }
        assert!(PhaseKind::parse("bogus").is_err());
    }
}
