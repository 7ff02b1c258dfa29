//! Experiment configuration: JSON with a documented schema, strict unknown-key
//! rejection, desk-scale defaults, and a paper-scale preset that documents the
//! original hyperparameters (not runnable at desk scale).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::lam::LamConfig;
use crate::synthenv::{DataGenConfig, Embodiment, EnvConfig};
use crate::training::{CollapseConfig, PhaseConfig, PhaseKind};
use crate::wm::WmConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub episodes_base: usize,
    pub episodes_probe: usize,
    pub episodes_downstream: usize,
    pub episode_len: usize,
    pub train_frac: f32,
    pub valid_frac: f32,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes_base: 512,
            episodes_probe: 160,
            episodes_downstream: 160,
            episode_len: 12,
            train_frac: 0.8,
            valid_frac: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub lr_warmup_steps: usize,
    /// Temporal window (frames) consumed per training clip.
    pub clip_len: usize,
    pub steps_pretrain: usize,
    pub steps_two_stage_lam: usize,
    pub steps_two_stage_wm: usize,
    pub steps_warmup: usize,
    pub steps_joint: usize,
    pub steps_naive: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 32,
            lr_warmup_steps: 200,
            clip_len: 8,
            steps_pretrain: 2000,
            steps_two_stage_lam: 1000,
            steps_two_stage_wm: 1600,
            steps_warmup: 400,
            steps_joint: 1600,
            steps_naive: 2000,
        }
    }
}

impl TrainConfig {
    pub fn phase(&self, kind: PhaseKind) -> PhaseConfig {
        let steps = match kind {
            PhaseKind::PretrainWm => self.steps_pretrain,
            PhaseKind::TwoStageLam => self.steps_two_stage_lam,
            PhaseKind::TwoStageWm => self.steps_two_stage_wm,
            PhaseKind::Warmup => self.steps_warmup,
            PhaseKind::JointE2e | PhaseKind::AblatePureWarmup | PhaseKind::AblateFrozenLam => {
                self.steps_joint
            }
            PhaseKind::NaiveJoint => self.steps_naive,
        };
        PhaseConfig {
            phase_kind: kind,
            steps,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_warmup_steps: self.lr_warmup_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Fixed test-set size for video metrics.
    pub test_clips: usize,
    pub probe_steps: usize,
    pub probe_batch: usize,
    pub probe_lr: f32,
    /// Validation sample budget for probing.
    pub probe_valid_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { test_clips: 64, probe_steps: 300, probe_batch: 128, probe_lr: 1e-2, probe_valid_samples: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub adapter_steps: usize,
    pub adapter_batch: usize,
    pub adapter_hidden: usize,
    pub adapter_lr: f32,
    pub finetune_steps: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { adapter_steps: 300, adapter_batch: 64, adapter_hidden: 64, adapter_lr: 1e-2, finetune_steps: 600 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub n_samples: usize,
    pub n_iters: usize,
    pub horizon: usize,
    pub elite_frac: f32,
    pub n_pairs: usize,
    /// Success when the final agent position is within this distance.
    pub success_tol: f32,
    /// Weight of the optional classifier logit in the reward.
    pub lambda: f32,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            n_iters: 3,
            horizon: 4,
            elite_frac: 0.1,
            n_pairs: 30,
            success_tol: 0.05,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub lam: LamConfig,
    pub wm: WmConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub adapt: AdaptConfig,
    pub plan: PlanConfig,
    pub collapse: CollapseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            seed: 0,
            env: EnvConfig::default(),
            data: DataConfig::default(),
            lam: LamConfig::default(),
            wm: WmConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            adapt: AdaptConfig::default(),
            plan: PlanConfig::default(),
            collapse: CollapseConfig::default(),
        }
    }
}

/// The paper-scale hyperparameters, for documentation and config echo.
pub fn paper_preset() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { preset: Preset::Paper, ..ExperimentConfig::default() };
    cfg.env.frame_size = 224;
    cfg.env.render_margin = 16;
    cfg.lam = LamConfig {
        frame_size: 224,
        patch: 14,
        width: 768,
        layers: 12,
        heads: 12,
        codebook_size: 32,
        code_dim: 32,
        action_tokens: 2,
        fdm_layers: 12,
        fdm_width: 768,
    };
    cfg.wm = WmConfig {
        frame_size: 256,
        patch: 8,
        width: 1152,
        blocks: 28,
        heads: 16,
        ctx_blocks: 6,
        max_frames: 32,
        guidance_scale: 4.0,
        denoise_steps: 10,
        cond_drop_prob: 0.1,
    };
    cfg.train = TrainConfig {
        lr: 7.5e-5,
        batch_size: 128,
        lr_warmup_steps: 2000,
        clip_len: 16,
        steps_pretrain: 30000,
        steps_two_stage_lam: 30000,
        steps_two_stage_wm: 30000,
        steps_warmup: 8000,
        steps_joint: 52000,
        steps_naive: 60000,
    };
    cfg.eval = EvalConfig {
        test_clips: 240,
        probe_steps: 1000,
        probe_batch: 512,
        probe_valid_samples: 20000,
        ..EvalConfig::default()
    };
    cfg.adapt = AdaptConfig { adapter_steps: 1000, adapter_batch: 64, finetune_steps: 3000, ..AdaptConfig::default() };
    cfg
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.lam.validate()?;
        self.wm.validate()?;
        if self.lam.frame_size != self.wm.frame_size {
            return Err(Error::Config("lam and wm frame sizes must agree".into()));
        }
        if self.lam.frame_size > self.env.render_size() {
            return Err(Error::Config("model frame size exceeds rendered frame size".into()));
        }
        if self.train.clip_len < 2 || self.train.clip_len > self.data.episode_len {
            return Err(Error::Config("clip_len must be in [2, episode_len]".into()));
        }
        if self.train.clip_len > self.wm.max_frames {
            return Err(Error::Config("clip_len exceeds wm.max_frames".into()));
        }
        Ok(())
    }

    /// Digest stamped on every artifact this config produces.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Hash binding checkpoints to the model architecture.
    pub fn model_hash(&self) -> String {
        let blob = serde_json::to_vec(&(&self.lam, &self.wm)).expect("model configs serialize");
        sha256_hex(&blob)
    }

    /// Dataset generation specs: (directory name, env variant, gen config).
    pub fn datasets(&self) -> Vec<(String, EnvConfig, DataGenConfig)> {
        let d = &self.data;
        let base_gen = DataGenConfig {
            name: "base".into(),
            n_episodes: d.episodes_base,
            episode_len: d.episode_len,
            train_frac: d.train_frac,
            valid_frac: d.valid_frac,
            actions_visible: false,
            seed: self.seed.wrapping_add(1),
        };
        let probe_gen = DataGenConfig {
            name: "probe".into(),
            n_episodes: d.episodes_probe,
            actions_visible: true,
            seed: self.seed.wrapping_add(2),
            ..base_gen.clone()
        };
        let polar_env = EnvConfig { embodiment: Embodiment::Polar, ..self.env.clone() };
        let polar_gen = DataGenConfig {
            name: "polar".into(),
            n_episodes: d.episodes_downstream,
            actions_visible: true,
            seed: self.seed.wrapping_add(3),
            ..base_gen.clone()
        };
        let shapes_env = EnvConfig { object_shapes: vec![2], ..self.env.clone() };
        let shapes_gen = DataGenConfig {
            name: "shapes".into(),
            n_episodes: d.episodes_downstream,
            actions_visible: true,
            seed: self.seed.wrapping_add(4),
            ..base_gen.clone()
        };
        vec![
            ("base".into(), self.env.clone(), base_gen),
            ("probe".into(), self.env.clone(), probe_gen),
            ("polar".into(), polar_env, polar_gen),
            ("shapes".into(), shapes_env, shapes_gen),
        ]
    }
}

fn deep_merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Parse, default, and validate a config file. A missing or empty file yields
/// desk-scale defaults; `preset=paper` swaps in the documented paper-scale
/// values before applying the file's explicit fields; unknown keys are
/// rejected with the offending field named.
pub fn load_config(path: Option<&Path>, preset_override: Option<Preset>) -> Result<ExperimentConfig> {
    let file_value: serde_json::Value = match path {
        None => serde_json::Value::Object(Default::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            if text.trim().is_empty() {
                serde_json::Value::Object(Default::default())
            } else {
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        }
    };

    let preset = match preset_override {
        Some(p) => p,
        None => match file_value.get("preset") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|_| Error::Config(format!("invalid preset `{v}`")))?,
            None => Preset::Desk,
        },
    };
    let base = match preset {
        Preset::Desk => ExperimentConfig::default(),
        Preset::Paper => paper_preset(),
    };
    let mut merged = serde_json::to_value(&base)?;
    deep_merge(&mut merged, &file_value);
    if preset_override.is_some() {
        merged["preset"] = serde_json::to_value(preset)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
