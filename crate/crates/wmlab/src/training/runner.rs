use std::path::Path;
use std::time::Instant;

use wmlab_nn::optim::{accumulate_grads, scale_grads, Adam};
use wmlab_nn::{hash_str, CounterRng, ParamStore, Tape, Tensor};

use super::{
    freeze_mask, lr_at, write_telemetry, CollapseAlarm, CollapseConfig, CollapseDetector,
    PhaseConfig, PhaseKind, TelemetryRecord, GROUP_IDM, GROUP_QUANTIZER,
};
use crate::checkpoint::group_digest;
use crate::error::{Error, Result};
use crate::exec::{map_slice, Exec};
use crate::lam::{Lam, LamConfig, UsageWindow, COMMIT_WEIGHT, VQ_WEIGHT};
use crate::synthenv::LoadedSplit;
use crate::training::{center_crop, crop_window};
use crate::wm::{CondSource, WmConfig, WorldModel};

/// The full joint state: one parameter store holding the five contract
/// groups, plus the model wiring over it.
pub struct Models {
    pub store: ParamStore,
    pub lam: Lam,
    pub wm: WorldModel,
}

impl Models {
    pub fn build(lam_cfg: &LamConfig, wm_cfg: &WmConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let lam = Lam::build(&mut store, lam_cfg, seed);
        let wm = WorldModel::build(&mut store, wm_cfg, lam_cfg.code_dim, lam_cfg.action_tokens, seed);
        Self { store, lam, wm }
    }
}

pub struct RunPhaseArgs<'a> {
    pub phase: &'a PhaseConfig,
    /// Training episodes at stored (render) resolution.
    pub train: &'a LoadedSplit,
    /// Temporal window length the models consume.
    pub clip_len: usize,
    pub run_seed: u64,
    pub exec: Exec,
    pub collapse: CollapseConfig,
    /// Per-episode, per-transition fixed code indices (GT-LAM fine-tuning).
    pub fixed_latents: Option<&'a [Vec<Vec<usize>>]>,
    /// Telemetry JSONL destination; written on success and on contract abort.
    pub telemetry_path: Option<&'a Path>,
}

pub struct PhaseOutcome {
    pub telemetry: Vec<TelemetryRecord>,
    pub telemetry_digest: String,
    pub alarm: Option<CollapseAlarm>,
}

struct ClipResult {
    grads: Vec<Option<Vec<f32>>>,
    total: f32,
    flow: Option<f32>,
    recon: Option<f32>,
    vq: Option<f32>,
    commit: Option<f32>,
    indices: Vec<usize>,
}

#[derive(Clone, Copy)]
struct ClipPlan {
    episode: usize,
    t0: usize,
    oy: usize,
    ox: usize,
    seed: u64,
}

/// Execute one training phase under its gradient-flow contract: enforce the
/// freeze mask via the optimizer, verify frozen groups byte-identical at the
/// end, track codebook telemetry per step, and abort on a sustained collapse
/// alarm in phases where collapse is unexpected.
pub fn run_phase(models: &mut Models, args: &RunPhaseArgs) -> Result<PhaseOutcome> {
    let phase = args.phase;
    phase.validate()?;
    let kind = phase.phase_kind;
    let mask = freeze_mask(kind);
    let lam_cfg = models.lam.cfg.clone();
    let wm_cfg = models.wm.cfg.clone();
    let model_size = lam_cfg.frame_size;
    let t_len = args.clip_len;

    if args.train.is_empty() {
        return Err(Error::MissingArtifact("empty training split".into()));
    }
    let stored = &args.train.clips[0];
    if stored.t < t_len {
        return Err(Error::Config(format!(
            "episodes have {} frames, clip_len {t_len} too long",
            stored.t
        )));
    }
    if stored.h < model_size {
        return Err(Error::Config("stored frames smaller than model size".into()));
    }
    if t_len > wm_cfg.max_frames {
        return Err(Error::Config("clip_len exceeds wm max_frames".into()));
    }
    let margin_span = stored.h - model_size + 1;
    let augment = phase.augment_random_crop();

    let start_digests: Vec<(String, String)> = models
        .store
        .groups()
        .iter()
        .map(|g| (g.name.clone(), group_digest(&models.store, &g.name)))
        .collect();

    let mut opt = Adam::new(&models.store);
    let k = lam_cfg.codebook_size;
    let mut usage = UsageWindow::new(k, args.collapse.window);
    let mut detector = CollapseDetector::new(args.collapse, k);
    let phase_hash = hash_str(&kind.name());
    let clock = Instant::now();

    let mut records: Vec<TelemetryRecord> = Vec::with_capacity(phase.steps);
    let mut alarm_seen: Option<CollapseAlarm> = None;

    for step in 0..phase.steps {
        let mut srng = CounterRng::keyed(&[args.run_seed, phase_hash, step as u64, 0]);
        let plans: Vec<ClipPlan> = (0..phase.batch_size)
            .map(|i| {
                let episode = srng.range(args.train.len());
                let t0 = srng.range(stored.t - t_len + 1);
                let (oy, ox) = if augment {
                    (srng.range(margin_span), srng.range(margin_span))
                } else {
                    ((stored.h - model_size) / 2, (stored.w - model_size) / 2)
                };
                let seed = CounterRng::keyed(&[args.run_seed, phase_hash, step as u64, 1 + i as u64])
                    .next_u64();
                ClipPlan { episode, t0, oy, ox, seed }
            })
            .collect();

        let trainable = mask_trainable(&mask);
        let results: Vec<Result<ClipResult>> = {
            let store = &models.store;
            let lam = &models.lam;
            let wm = &models.wm;
            map_slice(args.exec, &plans, |plan| {
                clip_step(store, lam, wm, kind, &trainable, args, plan, t_len, model_size)
            })
        };

        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        let mut indices: Vec<usize> = Vec::new();
        let (mut total, mut flow, mut recon, mut vq, mut commit) = (0.0f32, 0.0f32, 0.0f32, 0.0f32, 0.0f32);
        let (mut has_flow, mut has_recon, mut has_vq) = (false, false, false);
        for r in results {
            let r = r?;
            total += r.total;
            if let Some(v) = r.flow {
                flow += v;
                has_flow = true;
            }
            if let Some(v) = r.recon {
                recon += v;
                has_recon = true;
            }
            if let Some(v) = r.vq {
                vq += v;
                has_vq = true;
            }
            if let Some(v) = r.commit {
                commit += v;
            }
            indices.extend(r.indices);
            accumulate_grads(&mut grads, &r.grads);
        }
        let bs = phase.batch_size as f32;
        total /= bs;
        scale_grads(&mut grads, 1.0 / bs);

        let codebook = if indices.is_empty() {
            None
        } else {
            usage.push(&indices);
            Some(usage.stats()?)
        };

        let mut alarm_now = false;
        if let Some(stats) = codebook {
            if let Some(alarm) = detector.observe(step as u64, stats) {
                alarm_now = true;
                if alarm_seen.is_none() {
                    alarm_seen = Some(alarm.clone());
                }
                if !kind.allows_collapse() {
                    records.push(record(
                        step, kind, phase, total, has_flow, flow / bs, has_recon, recon / bs,
                        has_vq, vq / bs, commit / bs, codebook, true, &clock,
                    ));
                    if let Some(path) = args.telemetry_path {
                        write_telemetry(path, &records)?;
                    }
                    return Err(Error::Contract(format!(
                        "collapse alarm during {} at step {step} (max_usage {:.3}, utilization {:.3})",
                        kind.name(),
                        stats.max_usage,
                        stats.utilization
                    )));
                }
            }
        }

        let lr = lr_at(step, phase.lr, phase.lr_warmup_steps);
        opt.step(&mut models.store, &grads, lr, &|g| mask.is_trainable(g), Some(1.0));

        records.push(record(
            step, kind, phase, total, has_flow, flow / bs, has_recon, recon / bs, has_vq,
            vq / bs, commit / bs, codebook, alarm_now, &clock,
        ));
    }

    // freeze contract: every group outside the mask is bit-identical
    for (name, before) in &start_digests {
        if !mask.is_trainable(name) {
            let after = group_digest(&models.store, name);
            if &after != before {
                return Err(Error::Contract(format!(
                    "frozen parameter group `{name}` drifted during {}",
                    kind.name()
                )));
            }
        }
    }

    if let Some(path) = args.telemetry_path {
        write_telemetry(path, &records)?;
    }
    let digest = super::telemetry_digest(&records);
    Ok(PhaseOutcome { telemetry: records, telemetry_digest: digest, alarm: alarm_seen })
}

#[allow(clippy::too_many_arguments)]
fn record(
    step: usize,
    kind: PhaseKind,
    phase: &PhaseConfig,
    total: f32,
    has_flow: bool,
    flow: f32,
    has_recon: bool,
    recon: f32,
    has_vq: bool,
    vq: f32,
    commit: f32,
    codebook: Option<crate::lam::CodebookStats>,
    alarm: bool,
    clock: &Instant,
) -> TelemetryRecord {
    TelemetryRecord {
        step: step as u64,
        phase_kind: kind,
        lr: lr_at(step, phase.lr, phase.lr_warmup_steps),
        loss_total: total,
        loss_flow: has_flow.then_some(flow),
        loss_recon: has_recon.then_some(recon),
        loss_vq: has_vq.then_some(vq),
        loss_commit: has_vq.then_some(commit),
        codebook,
        collapse_alarm: alarm,
        wall_time: clock.elapsed().as_secs_f64(),
    }
}

fn mask_trainable(mask: &super::FreezeMask) -> Vec<&'static str> {
    mask.trainable_groups().to_vec()
}

#[allow(clippy::too_many_arguments)]
fn clip_step(
    store: &ParamStore,
    lam: &Lam,
    wm: &WorldModel,
    kind: PhaseKind,
    trainable: &[&str],
    args: &RunPhaseArgs,
    plan: &ClipPlan,
    t_len: usize,
    model_size: usize,
) -> Result<ClipResult> {
    let stored = &args.train.clips[plan.episode];
    let clip = crop_window(stored, plan.t0, t_len, plan.oy, plan.ox, model_size);
    let mut rng = CounterRng::keyed(&[plan.seed]);
    let tape = Tape::new(store);

    let quantizer_trains = trainable.contains(&GROUP_QUANTIZER);
    let idm_trains = trainable.contains(&GROUP_IDM);

    if kind == PhaseKind::TwoStageLam {
        let (recon, vq, commit, total, indices) = lam.loss(&tape, &clip)?;
        let grads = tape.backward(total);
        return Ok(ClipResult {
            grads: grads.by_param,
            total: tape.value(total).data()[0],
            flow: None,
            recon: Some(tape.value(recon).data()[0]),
            vq: Some(tape.value(vq).data()[0]),
            commit: Some(tape.value(commit).data()[0]),
            indices,
        });
    }

    // world-model-bearing phases
    let n_trans = t_len - 1;
    let drop: Vec<bool> = (0..n_trans).map(|_| rng.chance(wm.cfg.cond_drop_prob)).collect();

    let (source, vq_terms, indices): (CondSource, Option<(wmlab_nn::Var, wmlab_nn::Var)>, Vec<usize>) =
        if kind == PhaseKind::PretrainWm {
            (CondSource::Null, None, Vec::new())
        } else if let Some(fixed) = args.fixed_latents {
            // GT-LAM conditioning: codebook rows looked up by fixed indices
            let per_ep = &fixed[plan.episode];
            let g = lam.cfg.action_tokens;
            let d = lam.cfg.code_dim;
            let cb = store.value(lam.quantizer.codebook);
            let mut data = Vec::with_capacity(n_trans * g * d);
            let mut idx = Vec::with_capacity(n_trans * g);
            for tr in plan.t0..plan.t0 + n_trans {
                for &code in &per_ep[tr] {
                    data.extend_from_slice(cb.row(code));
                    idx.push(code);
                }
            }
            let embeds = tape.input(Tensor::new(n_trans * g, d, data));
            (CondSource::Embeds { embeds, drop: &[] }, None, idx)
        } else {
            let (_pre, q) = lam.encode(&tape, &clip)?;
            let embeds = if idm_trains { q.st_embed } else { tape.detach(q.st_embed) };
            let terms = quantizer_trains.then_some((q.vq_loss, q.commit_loss));
            (CondSource::Embeds { embeds, drop: &[] }, terms, q.indices)
        };

    // rebind the drop mask (borrow shenanigans: CondSource holds a slice)
    let source = match source {
        CondSource::Null => CondSource::Null,
        CondSource::Embeds { embeds, .. } => CondSource::Embeds { embeds, drop: &drop },
    };

    let flow = wm.flow_loss(&tape, &clip, source, &mut rng)?;
    let (total, vq_v, commit_v) = match vq_terms {
        Some((vq, commit)) => {
            let t1 = tape.add(flow, tape.scale(vq, VQ_WEIGHT));
            let total = tape.add(t1, tape.scale(commit, COMMIT_WEIGHT));
            (total, Some(tape.value(vq).data()[0]), Some(tape.value(commit).data()[0]))
        }
        None => (flow, None, None),
    };
    let grads = tape.backward(total);
    Ok(ClipResult {
        grads: grads.by_param,
        total: tape.value(total).data()[0],
        flow: Some(tape.value(flow).data()[0]),
        recon: None,
        vq: vq_v,
        commit: commit_v,
        indices,
    })
}

/// Center-cropped model-sized view of a stored episode (the non-augmented
/// extraction path).
pub fn model_view(stored: &crate::synthenv::VideoClip, model_size: usize) -> crate::synthenv::VideoClip {
    center_crop(stored, model_size)
}
