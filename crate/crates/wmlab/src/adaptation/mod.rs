//! Real-action adaptation: GT-LAM extraction, the MLP adapter from real
//! actions to code indices, short world-model fine-tuning on GT-LAM
//! conditions, dual-mode prediction, and codebook-distribution diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wmlab_nn::optim::Adam;
use wmlab_nn::{CounterRng, ParamStore, Tape, Tensor};

use crate::config::AdaptConfig;
use crate::error::{Error, Result};
use crate::lam::{stats_from_counts, CodebookStats, LatentAction};
use crate::synthenv::{Frame, LoadedSplit, RealAction, VideoClip};
use crate::training::{
    center_crop, run_phase, CollapseConfig, Models, PhaseConfig, PhaseKind, PhaseOutcome,
    RunPhaseArgs,
};
use crate::wm::{sample, SampleParams};

/// One labeled transition: the real action and the G code indices the frozen
/// LAM assigned to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtLamPair {
    pub action: RealAction,
    pub indices: Vec<usize>,
}

/// Per-episode, per-transition GT-LAM code indices.
pub type GtLamIndex = Vec<Vec<Vec<usize>>>;

/// Run the frozen LAM over every transition of a downstream split with
/// visible actions. Deterministic: same dataset twice gives identical pairs.
pub fn extract_gt_lam(models: &Models, split: &LoadedSplit) -> Result<(Vec<GtLamPair>, GtLamIndex)> {
    let actions = split.actions.as_ref().ok_or(Error::ActionsHidden)?;
    let size = models.lam.cfg.frame_size;
    let mut pairs = Vec::new();
    let mut per_episode = Vec::with_capacity(split.len());
    for (clip, acts) in split.clips.iter().zip(actions) {
        let view = center_crop(clip, size);
        let latents = models.lam.extract(&models.store, &view)?;
        let mut ep = Vec::with_capacity(latents.len());
        for (la, a) in latents.iter().zip(acts) {
            pairs.push(GtLamPair { action: *a, indices: la.indices.clone() });
            ep.push(la.indices.clone());
        }
        per_episode.push(ep);
    }
    Ok((pairs, per_episode))
}

/// Two-layer MLP translating a real action into G independent K-way
/// categorical heads over the codebook.
pub struct Adapter {
    pub store: ParamStore,
    pub hidden: usize,
    pub k: usize,
    pub g: usize,
    w1: wmlab_nn::ParamId,
    b1: wmlab_nn::ParamId,
    w2: wmlab_nn::ParamId,
    b2: wmlab_nn::ParamId,
}

impl Adapter {
    pub fn build(hidden: usize, k: usize, g: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let w1 = store.add_linear_weight("adapter", "adapter.w1", hidden, 3, seed);
        let b1 = store.add_zeros("adapter", "adapter.b1", 1, hidden);
        let w2 = store.add_linear_weight("adapter", "adapter.w2", g * k, hidden, seed);
        let b2 = store.add_zeros("adapter", "adapter.b2", 1, g * k);
        Self { store, hidden, k, g, w1, b1, w2, b2 }
    }

    fn logits_batch(&self, t: &Tape, x: wmlab_nn::Var) -> wmlab_nn::Var {
        let h = t.relu(t.linear(x, t.param(self.w1), Some(t.param(self.b1))));
        t.linear(h, t.param(self.w2), Some(t.param(self.b2)))
    }

    /// Per-head probability vectors over the K codes.
    pub fn probs(&self, action: &RealAction) -> Vec<Vec<f32>> {
        let t = Tape::eval(&self.store);
        let x = t.input(Tensor::new(1, 3, action.features().to_vec()));
        let logits = self.logits_batch(&t, x);
        let row = t.value(logits);
        (0..self.g)
            .map(|h| {
                let l = &row.data()[h * self.k..(h + 1) * self.k];
                let m = l.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let e: Vec<f32> = l.iter().map(|v| (v - m).exp()).collect();
                let s: f32 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    /// Per-head argmax, ties toward the lowest index.
    pub fn predict_indices(&self, action: &RealAction) -> Vec<usize> {
        self.probs(action)
            .iter()
            .map(|p| {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Codebook lookup of the predicted indices.
    pub fn predict_latent(&self, models: &Models, action: &RealAction) -> LatentAction {
        let indices = self.predict_indices(action);
        let cb = models.store.value(models.lam.quantizer.codebook);
        let d = models.lam.cfg.code_dim;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            data.extend_from_slice(cb.row(i));
        }
        LatentAction { embeddings: Tensor::new(indices.len(), d, data), indices }
    }

    pub fn save(&self, path: &Path, config_hash: &str, seed: u64) -> Result<()> {
        crate::checkpoint::save_checkpoint(
            &self.store,
            &crate::checkpoint::CheckpointHeader {
                module: "adapter".into(),
                config_hash: config_hash.into(),
                step: 0,
                seed,
                phase: None,
            },
            path,
        )
    }
}

pub struct AdapterOutcome {
    pub adapter: Adapter,
    /// Held-out top-1 accuracy per head.
    pub holdout_acc: Vec<f32>,
    /// Majority-class rate per head on the training labels.
    pub majority_baseline: Vec<f32>,
    /// Heads whose training labels were single-class.
    pub degenerate_heads: Vec<bool>,
}

/// Cross-entropy training over each head; the last 20% of the pairs are held
/// out for accuracy reporting.
pub fn train_adapter(pairs: &[GtLamPair], cfg: &AdaptConfig, k: usize, g: usize, seed: u64) -> Result<AdapterOutcome> {
    if pairs.is_empty() {
        return Err(Error::MissingArtifact("no adapter training pairs".into()));
    }
    let n_hold = (pairs.len() / 5).max(1).min(pairs.len() - 1);
    let n_train = pairs.len() - n_hold;
    let (train, hold) = pairs.split_at(n_train);

    let mut degenerate_heads = vec![true; g];
    let mut counts = vec![vec![0u64; k]; g];
    for p in train {
        for h in 0..g {
            counts[h][p.indices[h]] += 1;
        }
    }
    let mut majority_baseline = vec![0.0f32; g];
    for h in 0..g {
        let used = counts[h].iter().filter(|&&c| c > 0).count();
        degenerate_heads[h] = used <= 1;
        majority_baseline[h] = *counts[h].iter().max().unwrap() as f32 / n_train as f32;
    }

    let adapter = {
        let mut adapter = Adapter::build(cfg.adapter_hidden, k, g, seed);
        let mut opt = Adam::new(&adapter.store);
        let batch = cfg.adapter_batch.min(n_train);
        for step in 0..cfg.adapter_steps {
            let mut rng = CounterRng::keyed(&[seed, 0xadab, step as u64]);
            let mut xb = Vec::with_capacity(batch * 3);
            let mut targets: Vec<Vec<usize>> = vec![Vec::with_capacity(batch); g];
            for _ in 0..batch {
                let p = &train[rng.range(n_train)];
                xb.extend_from_slice(&p.action.features());
                for h in 0..g {
                    targets[h].push(p.indices[h]);
                }
            }
            let t = Tape::new(&adapter.store);
            let x = t.input(Tensor::new(batch, 3, xb));
            let logits = adapter.logits_batch(&t, x);
            let mut loss = None;
            for h in 0..g {
                let head = t.slice_cols(logits, h * k, k);
                let ce = t.cross_entropy(head, &targets[h]);
                loss = Some(match loss {
                    None => ce,
                    Some(acc) => t.add(acc, ce),
                });
            }
            let loss = t.scale(loss.unwrap(), 1.0 / g as f32);
            let grads = t.backward(loss);
            opt.step(&mut adapter.store, &grads.by_param, cfg.adapter_lr, &|_| true, None);
        }
        adapter
    };

    let mut correct = vec![0usize; g];
    for p in hold {
        let pred = adapter.predict_indices(&p.action);
        for h in 0..g {
            if pred[h] == p.indices[h] {
                correct[h] += 1;
            }
        }
    }
    let holdout_acc = correct.iter().map(|&c| c as f32 / n_hold as f32).collect();
    Ok(AdapterOutcome { adapter, holdout_acc, majority_baseline, degenerate_heads })
}

/// Fine-tune the world model on a downstream split conditioned on GT-LAM
/// codes: the LAM stays frozen (enforced by digest), the backbone and
/// conditioning train on the flow objective.
pub fn finetune_wm(
    models: &mut Models,
    downstream_train: &LoadedSplit,
    gt_index: &GtLamIndex,
    steps: usize,
    base_phase: &PhaseConfig,
    clip_len: usize,
    run_seed: u64,
    exec: crate::exec::Exec,
    telemetry_path: Option<&Path>,
) -> Result<PhaseOutcome> {
    let phase = PhaseConfig {
        phase_kind: PhaseKind::TwoStageWm,
        steps,
        ..base_phase.clone()
    };
    run_phase(
        models,
        &RunPhaseArgs {
            phase: &phase,
            train: downstream_train,
            clip_len,
            run_seed,
            exec,
            collapse: CollapseConfig::default(),
            fixed_latents: Some(gt_index),
            telemetry_path,
        },
    )
}

/// Mode (b): translate real actions through the adapter and sample.
pub fn adapted_predict(
    models: &Models,
    adapter: &Adapter,
    real_actions: &[RealAction],
    first_frame: &Frame,
    params: &SampleParams,
) -> Result<VideoClip> {
    let latents: Vec<LatentAction> =
        real_actions.iter().map(|a| adapter.predict_latent(models, a)).collect();
    sample(&models.store, &models.wm, first_frame, &latents, params)
}

/// Mode (a): condition directly on GT-LAM indices.
pub fn gt_lam_predict(
    models: &Models,
    indices: &[Vec<usize>],
    first_frame: &Frame,
    params: &SampleParams,
) -> Result<VideoClip> {
    let cb = models.store.value(models.lam.quantizer.codebook);
    let d = models.lam.cfg.code_dim;
    let latents: Vec<LatentAction> = indices
        .iter()
        .map(|idx| {
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                data.extend_from_slice(cb.row(i));
            }
            LatentAction { embeddings: Tensor::new(idx.len(), d, data), indices: idx.clone() }
        })
        .collect();
    sample(&models.store, &models.wm, first_frame, &latents, params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Train,
    GtLamFinetune,
    AdapterInference,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CodeDistributionSnapshot {
    pub kind: DistributionKind,
    pub counts: Vec<u64>,
    pub stats: CodebookStats,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistributionReport {
    pub snapshots: Vec<CodeDistributionSnapshot>,
    /// (utilization, max_usage, entropy) deltas of each later stage vs train.
    pub deltas: Vec<[f32; 3]>,
    /// Adapter-inference stream degenerate per the collapse thresholds.
    pub adapter_flagged: bool,
}

fn snapshot(kind: DistributionKind, indices: &[usize], k: usize) -> Result<CodeDistributionSnapshot> {
    if indices.is_empty() {
        return Err(Error::Shape(format!("empty index stream for {kind:?}")));
    }
    let mut counts = vec![0u64; k];
    for &i in indices {
        counts[i] += 1;
    }
    let stats = stats_from_counts(&counts)?;
    Ok(CodeDistributionSnapshot { kind, counts, stats })
}

/// The three-way distribution comparison: training vs GT-LAM fine-tuning vs
/// adapter inference.
pub fn codebook_distribution_report(
    train_stream: &[usize],
    finetune_stream: &[usize],
    adapter_stream: &[usize],
    k: usize,
    collapse: &CollapseConfig,
) -> Result<DistributionReport> {
    let snapshots = vec![
        snapshot(DistributionKind::Train, train_stream, k)?,
        snapshot(DistributionKind::GtLamFinetune, finetune_stream, k)?,
        snapshot(DistributionKind::AdapterInference, adapter_stream, k)?,
    ];
    let base = snapshots[0].stats;
    let deltas = snapshots
        .iter()
        .skip(1)
        .map(|s| {
            [
                s.stats.utilization - base.utilization,
                s.stats.max_usage - base.max_usage,
                s.stats.entropy - base.entropy,
            ]
        })
        .collect();
    let a = snapshots[2].stats;
    let adapter_flagged =
        a.max_usage >= collapse.max_usage_hi || a.utilization <= collapse.utilization_lo_codes / k as f32;
    Ok(DistributionReport { snapshots, deltas, adapter_flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::Embodiment;

    fn pair(dx: f32, dy: f32, idx: Vec<usize>) -> GtLamPair {
        GtLamPair { action: RealAction::cartesian(dx, dy, false), indices: idx }
    }

    #[test]
    fn realizable_mapping_reaches_high_accuracy() {
        // labels a deterministic function of the action's sign pattern
        let mut pairs = Vec::new();
        let mut rng = CounterRng::new(5);
        for _ in 0..600 {
            let dx = rng.uniform_in(-0.2, 0.2);
            let dy = rng.uniform_in(-0.2, 0.2);
            let i0 = usize::from(dx > 0.0);
            let i1 = usize::from(dy > 0.0) + 2;
            pairs.push(pair(dx, dy, vec![i0, i1]));
        }
        let cfg = AdaptConfig { adapter_steps: 400, ..AdaptConfig::default() };
        let out = train_adapter(&pairs, &cfg, 4, 2, 0).unwrap();
        for (h, acc) in out.holdout_acc.iter().enumerate() {
            assert!(*acc > 0.95, "head {h} accuracy {acc}");
        }
        assert!(!out.degenerate_heads.iter().any(|&d| d));
    }

    #[test]
    fn label_noise_floors_at_majority_rate() {
        // labels independent of inputs, uniform over K = 4
        let mut pairs = Vec::new();
        let mut rng = CounterRng::new(6);
        for _ in 0..600 {
            pairs.push(pair(
                rng.uniform_in(-0.2, 0.2),
                rng.uniform_in(-0.2, 0.2),
                vec![rng.range(4), rng.range(4)],
            ));
        }
        let cfg = AdaptConfig { adapter_steps: 200, ..AdaptConfig::default() };
        let out = train_adapter(&pairs, &cfg, 4, 2, 0).unwrap();
        for (h, acc) in out.holdout_acc.iter().enumerate() {
            let maj = out.majority_baseline[h];
            assert!(
                (*acc - maj).abs() < 0.15,
                "head {h}: accuracy {acc} should be near the majority rate {maj}"
            );
        }
    }

    #[test]
    fn degenerate_single_class_labels_are_flagged() {
        let pairs: Vec<GtLamPair> =
            (0..50).map(|i| pair(i as f32 * 0.001, 0.0, vec![3, 1])).collect();
        let cfg = AdaptConfig { adapter_steps: 20, ..AdaptConfig::default() };
        let out = train_adapter(&pairs, &cfg, 4, 2, 0).unwrap();
        assert!(out.degenerate_heads.iter().all(|&d| d));
        assert_eq!(out.holdout_acc, vec![1.0, 1.0], "constant labels are trivially predictable");
    }

    #[test]
    fn adapter_argmax_ties_break_low() {
        let adapter = Adapter::build(4, 4, 2, 0);
        // zero-initialized final layer: all logits equal -> index 0 everywhere
        let idx = adapter.predict_indices(&RealAction::cartesian(0.1, 0.1, false));
        assert_eq!(idx, vec![0, 0]);
    }

    #[test]
    fn polar_actions_feed_features_directly() {
        let a = RealAction { embodiment: Embodiment::Polar, values: [1.2, 0.2], grip: true };
        assert_eq!(a.features(), [1.2, 0.2, 1.0]);
    }

    #[test]
    fn empty_extraction_gives_empty_pairs() {
        let split = LoadedSplit { clips: vec![], actions: Some(vec![]) };
        let models = Models::build(
            &crate::lam::LamConfig {
                frame_size: 8,
                patch: 4,
                width: 16,
                layers: 1,
                heads: 2,
                codebook_size: 4,
                code_dim: 4,
                action_tokens: 2,
                fdm_layers: 1,
                fdm_width: 16,
            },
            &crate::wm::WmConfig {
                frame_size: 8,
                patch: 4,
                width: 16,
                blocks: 1,
                heads: 2,
                ctx_blocks: 1,
                max_frames: 8,
                ..crate::wm::WmConfig::default()
            },
            0,
        );
        let (pairs, per_ep) = extract_gt_lam(&models, &split).unwrap();
        assert!(pairs.is_empty() && per_ep.is_empty());
    }

    #[test]
    fn distribution_report_identities() {
        let stream: Vec<usize> = vec![0, 1, 2, 3, 0, 1];
        let cfg = CollapseConfig::default();
        let r = codebook_distribution_report(&stream, &stream, &stream, 4, &cfg).unwrap();
        for d in &r.deltas {
            assert_eq!(*d, [0.0, 0.0, 0.0]);
        }
        assert!(!r.adapter_flagged);

        let constant = vec![2usize; 40];
        let r = codebook_distribution_report(&stream, &stream, &constant, 4, &cfg).unwrap();
        assert!(r.adapter_flagged);
        assert_eq!(r.snapshots[2].stats.max_usage, 1.0);
        assert_eq!(r.snapshots[2].stats.utilization, 0.25);

        assert!(codebook_distribution_report(&[], &stream, &stream, 4, &cfg).is_err());
    }
}
