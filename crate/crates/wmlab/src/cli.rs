//! Command-line surface: dataset generation, phase/pipeline training with
//! checkpoint chaining, probing, evaluation, adaptation, planning, and the
//! comparison report. Every command is idempotent for an identical config
//! digest + seed and skips completed artifacts unless --force.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use wmlab_nn::{hash_str, CounterRng};

use crate::adaptation::{
    adapted_predict, codebook_distribution_report, extract_gt_lam, finetune_wm, gt_lam_predict,
    train_adapter,
};
use crate::checkpoint::{
    load_checkpoint, peek_header, save_checkpoint, store_digest, CheckpointHeader,
};
use crate::config::{load_config, ExperimentConfig, Preset};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::eval::{
    collect_probe_data, evaluate_video_metrics, grouped_bar_chart, line_chart, median_baseline_l1,
    shuffled, train_probe, MethodRow, Report, Series,
};
use crate::exec::Exec;
use crate::planner::{evaluate_task, make_task, OracleEnvModel, TaskKind, WorldModelPlanner};
use crate::synthenv::{generate_dataset, load_dataset, Dataset, LoadedSplit, Split};
use crate::training::{
    run_phase, Models, PhaseKind, PhaseOutcome, RunPhaseArgs, TelemetryRecord,
    GROUP_FDM, GROUP_IDM, GROUP_QUANTIZER, GROUP_WM_BACKBONE,
};
use crate::util::{read_json, write_json_atomic};
use crate::wm::SampleParams;

#[derive(Parser, Debug)]
#[command(name = "wmlab", about = "Latent-action world model lab", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON experiment config; omitted = desk-scale defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Arm seed (varies training streams; dataset seeds come from the config).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Recompute artifacts even when digests match.
    #[arg(long, global = true, default_value_t = false)]
    pub force: bool,
    /// Config preset override.
    #[arg(long, global = true, value_parser = parse_preset)]
    pub preset: Option<Preset>,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    match s {
        "desk" => Ok(Preset::Desk),
        "paper" => Ok(Preset::Paper),
        other => Err(format!("unknown preset `{other}` (expected desk|paper)")),
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic datasets (base, probe, polar, shapes).
    GenData,
    /// Train one phase (`phase=warmup`) or a whole pipeline (`pipeline=cola`).
    Train {
        /// `phase=<name>` or `pipeline=<two-stage|naive-joint|cola|ablate-pure-warmup|ablate-frozen-lam>`
        target: String,
    },
    /// Linear-probe a checkpoint's latent actions against real actions.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// PSNR/SSIM of a checkpoint's action-conditioned video prediction.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset to evaluate on (base|probe|polar|shapes).
        #[arg(long, default_value = "base")]
        dataset: String,
    },
    /// Adapt a checkpoint to a downstream real-action dataset.
    Adapt {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "polar")]
        dataset: String,
    },
    /// Sampling-based MPC evaluation on a task.
    Plan {
        /// `oracle` or a path to an adapted checkpoint directory.
        #[arg(long, default_value = "oracle")]
        model: String,
        #[arg(long, default_value = "reach")]
        task: String,
    },
    /// Aggregate every trained method into the comparison report + plots.
    Report,
}

/// Entry point used by the binary; returns its process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.common.config.as_deref(), cli.common.preset)?;
    let ctx = Ctx {
        cfg,
        seed: cli.common.seed,
        out: cli.common.out.clone(),
        force: cli.common.force,
        exec: Exec::Parallel,
    };
    match &cli.command {
        Command::GenData => ctx.gen_data().map(|_| ()),
        Command::Train { target } => ctx.train(target),
        Command::Probe { ckpt } => ctx.probe(ckpt).map(|_| ()),
        Command::Eval { ckpt, dataset } => ctx.eval(ckpt, dataset).map(|_| ()),
        Command::Adapt { ckpt, dataset } => ctx.adapt(ckpt, dataset).map(|_| ()),
        Command::Plan { model, task } => ctx.plan(model, task).map(|_| ()),
        Command::Report => ctx.report().map(|_| ()),
    }
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
    pub exec: Exec,
}

#[derive(Serialize, Deserialize)]
pub struct StageMeta {
    pub config_digest: String,
    pub seed: u64,
    pub phase: String,
    pub steps: usize,
    pub telemetry_digest: String,
    pub checkpoint_digest: String,
    pub collapse_alarm: bool,
}

/// A stage's dependency: load `groups` from the checkpoint of (stage, seed).
struct Dep {
    stage: &'static str,
    groups: &'static [&'static str],
    /// Dependency seed: shared stages (pretrain) pin this to 0.
    seed_of: fn(u64) -> u64,
}

struct StageDef {
    name: &'static str,
    kind: PhaseKind,
    deps: &'static [Dep],
    seed_of: fn(u64) -> u64,
}

fn own(seed: u64) -> u64 {
    seed
}

fn shared(_seed: u64) -> u64 {
    0
}

const LAM_GROUPS: [&str; 3] = [GROUP_IDM, GROUP_QUANTIZER, GROUP_FDM];
const BACKBONE_ONLY: [&str; 1] = [GROUP_WM_BACKBONE];
const ALL: [&str; 0] = [];

static STAGES: &[StageDef] = &[
    StageDef { name: "pretrain", kind: PhaseKind::PretrainWm, deps: &[], seed_of: shared },
    StageDef { name: "two_stage_lam", kind: PhaseKind::TwoStageLam, deps: &[], seed_of: own },
    StageDef {
        name: "two_stage_wm",
        kind: PhaseKind::TwoStageWm,
        deps: &[
            Dep { stage: "two_stage_lam", groups: &LAM_GROUPS, seed_of: own },
            Dep { stage: "pretrain", groups: &BACKBONE_ONLY, seed_of: shared },
        ],
        seed_of: own,
    },
    StageDef {
        name: "naive_joint",
        kind: PhaseKind::NaiveJoint,
        deps: &[Dep { stage: "pretrain", groups: &BACKBONE_ONLY, seed_of: shared }],
        seed_of: own,
    },
    StageDef {
        name: "warmup",
        kind: PhaseKind::Warmup,
        deps: &[Dep { stage: "pretrain", groups: &BACKBONE_ONLY, seed_of: shared }],
        seed_of: own,
    },
    StageDef {
        name: "joint_e2e",
        kind: PhaseKind::JointE2e,
        deps: &[Dep { stage: "warmup", groups: &ALL, seed_of: own }],
        seed_of: own,
    },
    StageDef {
        name: "ablate_pure_warmup",
        kind: PhaseKind::AblatePureWarmup,
        deps: &[Dep { stage: "warmup", groups: &ALL, seed_of: own }],
        seed_of: own,
    },
    StageDef {
        name: "ablate_frozen_lam",
        kind: PhaseKind::AblateFrozenLam,
        deps: &[Dep { stage: "warmup", groups: &ALL, seed_of: own }],
        seed_of: own,
    },
];

fn stage_def(name: &str) -> Result<&'static StageDef> {
    STAGES
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("unknown phase `{name}`")))
}

/// Pipeline -> ordered stage names (each stage idempotent, so shared prefixes
/// like pretrain and warmup are reused across pipelines).
pub fn pipeline_stages(name: &str) -> Result<Vec<&'static str>> {
    match name {
        "two-stage" => Ok(vec!["pretrain", "two_stage_lam", "two_stage_wm"]),
        "naive-joint" => Ok(vec!["pretrain", "naive_joint"]),
        "cola" => Ok(vec!["pretrain", "warmup", "joint_e2e"]),
        "ablate-pure-warmup" => Ok(vec!["pretrain", "warmup", "ablate_pure_warmup"]),
        "ablate-frozen-lam" => Ok(vec!["pretrain", "warmup", "ablate_frozen_lam"]),
        other => Err(Error::Config(format!("unknown pipeline `{other}`"))),
    }
}

/// The final (method-defining) stage of each pipeline, for reports.
pub const METHOD_STAGES: [(&str, &str); 5] = [
    ("two-stage", "two_stage_wm"),
    ("naive-joint", "naive_joint"),
    ("cola", "joint_e2e"),
    ("ablate-pure-warmup", "ablate_pure_warmup"),
    ("ablate-frozen-lam", "ablate_frozen_lam"),
];

impl Ctx {
    pub fn stage_dir(&self, stage: &str, seed: u64) -> PathBuf {
        self.out.join("runs").join(stage).join(format!("seed{seed}"))
    }

    pub fn ckpt_path(&self, stage: &str, seed: u64) -> PathBuf {
        self.stage_dir(stage, seed).join("checkpoint.ckpt")
    }

    fn data_dir(&self, name: &str) -> PathBuf {
        self.out.join("data").join(name)
    }

    pub fn gen_data(&self) -> Result<Vec<Dataset>> {
        let mut out = Vec::new();
        for (name, env, gen) in self.cfg.datasets() {
            let dir = self.data_dir(&name);
            if self.force {
                let _ = std::fs::remove_dir_all(&dir);
            }
            generate_dataset(&env, &gen, &dir, self.exec)?;
            out.push(load_dataset(&dir)?);
        }
        Ok(out)
    }

    fn dataset(&self, name: &str) -> Result<Dataset> {
        load_dataset(&self.data_dir(name)).map_err(|_| {
            Error::MissingArtifact(format!("dataset `{name}` not generated (run gen-data)"))
        })
    }

    /// Fresh models with arm-seed initialization.
    fn build_models(&self, arm_seed: u64) -> Models {
        let init = CounterRng::keyed(&[self.cfg.seed, arm_seed, hash_str("init")]).next_u64();
        Models::build(&self.cfg.lam, &self.cfg.wm, init)
    }

    /// Load a full checkpoint into freshly built models.
    pub fn load_models(&self, ckpt: &Path) -> Result<(Models, CheckpointHeader)> {
        let header = peek_header(ckpt)?;
        let mut models = self.build_models(header.seed);
        let header = load_checkpoint(&mut models.store, ckpt, &self.cfg.model_hash(), &[])?;
        Ok((models, header))
    }

    fn run_stage(&self, def: &StageDef) -> Result<()> {
        let seed = (def.seed_of)(self.seed);
        let dir = self.stage_dir(def.name, seed);
        let meta_path = dir.join("meta.json");
        let digest = self.cfg.digest();
        if !self.force && meta_path.exists() {
            let meta: StageMeta = read_json(&meta_path)?;
            if meta.config_digest == digest && meta.seed == seed {
                println!("[skip] {} seed{seed} (complete)", def.name);
                return Ok(());
            }
        }
        for dep in def.deps {
            let dep_seed = (dep.seed_of)(self.seed);
            if !self.ckpt_path(dep.stage, dep_seed).exists() {
                return Err(Error::MissingArtifact(format!(
                    "stage `{}` requires `{}` seed{dep_seed}",
                    def.name, dep.stage
                )));
            }
        }

        let mut models = self.build_models(seed);
        for dep in def.deps {
            let dep_seed = (dep.seed_of)(self.seed);
            load_checkpoint(
                &mut models.store,
                &self.ckpt_path(dep.stage, dep_seed),
                &self.cfg.model_hash(),
                dep.groups,
            )?;
        }

        let base = self.dataset("base")?;
        let train_split = base.load_split(Split::Train)?;
        let phase = self.cfg.train.phase(def.kind);
        println!("[run ] {} seed{seed}: {} steps", def.name, phase.steps);
        let run_seed = CounterRng::keyed(&[self.cfg.seed, seed, hash_str(def.name)]).next_u64();
        let outcome = run_phase(
            &mut models,
            &RunPhaseArgs {
                phase: &phase,
                train: &train_split,
                clip_len: self.cfg.train.clip_len,
                run_seed,
                exec: self.exec,
                collapse: self.cfg.collapse,
                fixed_latents: None,
                telemetry_path: Some(&dir.join("telemetry.jsonl")),
            },
        )?;
        self.finish_stage(def.name, seed, &models, &phase.phase_kind.name(), phase.steps, &outcome, &dir)
    }

    fn finish_stage(
        &self,
        stage: &str,
        seed: u64,
        models: &Models,
        phase_name: &str,
        steps: usize,
        outcome: &PhaseOutcome,
        dir: &Path,
    ) -> Result<()> {
        let header = CheckpointHeader {
            module: stage.to_string(),
            config_hash: self.cfg.model_hash(),
            step: steps as u64,
            seed,
            phase: Some(phase_name.to_string()),
        };
        save_checkpoint(&models.store, &header, &dir.join("checkpoint.ckpt"))?;
        let meta = StageMeta {
            config_digest: self.cfg.digest(),
            seed,
            phase: phase_name.to_string(),
            steps,
            telemetry_digest: outcome.telemetry_digest.clone(),
            checkpoint_digest: store_digest(&models.store),
            collapse_alarm: outcome.alarm.is_some(),
        };
        write_json_atomic(&dir.join("meta.json"), &meta)?;
        println!(
            "[done] {stage} seed{seed}: ckpt {} telemetry {}",
            &meta.checkpoint_digest[..12],
            &meta.telemetry_digest[..12]
        );
        Ok(())
    }

    pub fn train(&self, target: &str) -> Result<()> {
        if let Some(name) = target.strip_prefix("pipeline=") {
            for stage in pipeline_stages(name)? {
                self.run_stage(stage_def(stage)?)?;
            }
            Ok(())
        } else if let Some(name) = target.strip_prefix("phase=") {
            self.run_stage(stage_def(name)?)
        } else {
            Err(Error::Config(format!(
                "train target must be phase=<name> or pipeline=<name>, got `{target}`"
            )))
        }
    }

    /// Probe a checkpoint against the probe dataset; cached by checkpoint digest.
    pub fn probe(&self, ckpt: &Path) -> Result<ProbeArtifact> {
        let (models, header) = self.load_models(ckpt)?;
        let tag = sha256_hex(format!("{}:{}", header.module, store_digest(&models.store)).as_bytes());
        let path = self.out.join("probes").join(format!("{}.json", &tag[..24]));
        if !self.force && path.exists() {
            return read_json(&path);
        }
        let probe_ds = self.dataset("probe")?;
        let train = probe_ds.load_split(Split::Train)?;
        let valid = probe_ds.load_split(Split::Valid)?;
        let limit_train = self.cfg.eval.probe_batch * self.cfg.eval.probe_steps;
        let train_data = collect_probe_data(&models, &train, limit_train)?;
        let valid_data = collect_probe_data(&models, &valid, self.cfg.eval.probe_valid_samples)?;
        let out = train_probe(&train_data, &valid_data, &self.cfg.eval, self.cfg.seed)?;
        let baseline = median_baseline_l1(&train_data, &valid_data);
        let shuffled_out = train_probe(
            &shuffled(&train_data, self.cfg.seed),
            &shuffled(&valid_data, self.cfg.seed + 1),
            &self.cfg.eval,
            self.cfg.seed,
        )?;
        let art = ProbeArtifact {
            module: header.module,
            probe_l1: out.valid_l1,
            baseline_l1: baseline,
            shuffled_l1: shuffled_out.valid_l1,
        };
        write_json_atomic(&path, &art)?;
        println!(
            "probe {}: L1 {:.4} baseline {:.4} shuffled {:.4}",
            art.module, art.probe_l1, art.baseline_l1, art.shuffled_l1
        );
        Ok(art)
    }

    /// Video metrics of a checkpoint on a dataset's test split; cached.
    pub fn eval(&self, ckpt: &Path, dataset: &str) -> Result<EvalArtifact> {
        let (models, header) = self.load_models(ckpt)?;
        let tag = sha256_hex(format!("{dataset}:{}", store_digest(&models.store)).as_bytes());
        let path = self.out.join("evals").join(format!("{}.json", &tag[..24]));
        if !self.force && path.exists() {
            return read_json(&path);
        }
        let ds = self.dataset(dataset)?;
        let test = ds.load_split(Split::Test)?;
        let m = evaluate_video_metrics(
            &models,
            &test,
            self.cfg.train.clip_len,
            self.cfg.eval.test_clips,
            CounterRng::keyed(&[self.cfg.seed, hash_str("eval")]).next_u64(),
            self.exec,
        )?;
        let art = EvalArtifact {
            module: header.module,
            dataset: dataset.to_string(),
            psnr_db: m.psnr_db,
            ssim_x100: m.ssim_x100,
        };
        write_json_atomic(&path, &art)?;
        println!("eval {} on {dataset}: psnr {:.2} dB ssim(x100) {:.2}", art.module, art.psnr_db, art.ssim_x100);
        Ok(art)
    }

    /// Full adaptation pass on a downstream dataset.
    pub fn adapt(&self, ckpt: &Path, dataset: &str) -> Result<AdaptArtifact> {
        let (mut models, header) = self.load_models(ckpt)?;
        let pre_digest = store_digest(&models.store);
        let dir = self.out.join("adapt").join(format!("{}_{dataset}", header.module));
        let art_path = dir.join("adaptation.json");
        if !self.force && art_path.exists() {
            return read_json(&art_path);
        }
        let ds = self.dataset(dataset)?;
        let train = ds.load_split(Split::Train)?;
        let test = ds.load_split(Split::Test)?;

        // GT-LAM extraction with the frozen LAM
        let (pairs, gt_index) = extract_gt_lam(&models, &train)?;
        let k = self.cfg.lam.codebook_size;
        let g = self.cfg.lam.action_tokens;

        // adapter: real action -> code indices
        let adapter_out = train_adapter(&pairs, &self.cfg.adapt, k, g, self.cfg.seed)?;
        adapter_out.adapter.save(&dir.join("adapter.ckpt"), &self.cfg.model_hash(), self.cfg.seed)?;

        // world-model fine-tuning on GT-LAM conditions (LAM frozen by contract)
        let lam_digest_before = crate::checkpoint::group_digest(&models.store, GROUP_IDM);
        let phase = self.cfg.train.phase(PhaseKind::TwoStageWm);
        let outcome = finetune_wm(
            &mut models,
            &train,
            &gt_index,
            self.cfg.adapt.finetune_steps,
            &phase,
            self.cfg.train.clip_len,
            CounterRng::keyed(&[self.cfg.seed, hash_str("finetune"), hash_str(dataset)]).next_u64(),
            self.exec,
            Some(&dir.join("finetune_telemetry.jsonl")),
        )?;
        assert_eq!(
            lam_digest_before,
            crate::checkpoint::group_digest(&models.store, GROUP_IDM),
            "finetune must not move the LAM"
        );
        save_checkpoint(
            &models.store,
            &CheckpointHeader {
                module: format!("{}+finetune_{dataset}", header.module),
                config_hash: self.cfg.model_hash(),
                step: self.cfg.adapt.finetune_steps as u64,
                seed: header.seed,
                phase: Some("finetune".into()),
            },
            &dir.join("finetuned.ckpt"),
        )?;

        // dual-mode evaluation on the downstream test split
        let (gt_psnr, ad_psnr, adapter_stream) =
            self.dual_mode_eval(&models, &adapter_out.adapter, &test)?;

        // distribution snapshots: training vs GT-LAM finetune vs adapter
        let base_ds = self.dataset("base")?;
        let base_train = base_ds.load_split(Split::Train)?;
        let mut train_stream = Vec::new();
        for clip in base_train.clips.iter().take(32) {
            let view = crate::training::center_crop(clip, self.cfg.lam.frame_size);
            for la in models.lam.extract(&models.store, &view)? {
                train_stream.extend(la.indices);
            }
        }
        let finetune_stream: Vec<usize> = gt_index.iter().flatten().flatten().copied().collect();
        let dist = codebook_distribution_report(
            &train_stream,
            &finetune_stream,
            &adapter_stream,
            k,
            &self.cfg.collapse,
        )?;
        write_json_atomic(&dir.join("distribution.json"), &dist)?;
        let names: Vec<String> = ["train", "gt_finetune", "adapter"].map(String::from).to_vec();
        grouped_bar_chart(
            "codebook distribution by stage",
            &names,
            &[
                ("utilization".into(), dist.snapshots.iter().map(|s| s.stats.utilization).collect()),
                ("max_usage".into(), dist.snapshots.iter().map(|s| s.stats.max_usage).collect()),
                ("entropy".into(), dist.snapshots.iter().map(|s| s.stats.entropy).collect()),
            ],
            &dir.join("distribution.svg"),
        )?;

        let art = AdaptArtifact {
            module: header.module,
            dataset: dataset.to_string(),
            adapter_holdout_acc: adapter_out.holdout_acc.clone(),
            adapter_majority_baseline: adapter_out.majority_baseline.clone(),
            degenerate_heads: adapter_out.degenerate_heads.clone(),
            gt_lam_psnr: gt_psnr,
            adapter_psnr: ad_psnr,
            adapter_flagged: dist.adapter_flagged,
            finetune_telemetry_digest: outcome.telemetry_digest,
            pre_finetune_digest: pre_digest,
        };
        write_json_atomic(&art_path, &art)?;
        println!(
            "adapt {} on {dataset}: acc {:?} (majority {:?}), psnr gt {:.2} adapter {:.2}",
            art.module, art.adapter_holdout_acc, art.adapter_majority_baseline, gt_psnr, ad_psnr
        );
        Ok(art)
    }

    /// GT-LAM-mode vs adapter-mode PSNR on a downstream test split; also
    /// returns the adapter's inference code stream.
    fn dual_mode_eval(
        &self,
        models: &Models,
        adapter: &crate::adaptation::Adapter,
        test: &LoadedSplit,
    ) -> Result<(f64, f64, Vec<usize>)> {
        let actions = test.actions.as_ref().ok_or(Error::ActionsHidden)?;
        let size = self.cfg.lam.frame_size;
        let t_len = self.cfg.train.clip_len;
        let n = test.len().min(self.cfg.eval.test_clips);
        let mut gt_psnr = 0.0f64;
        let mut ad_psnr = 0.0f64;
        let mut stream = Vec::new();
        for i in 0..n {
            let gt = crate::training::center_crop(&test.clips[i], size);
            let gt = crate::training::crop_window(&gt, 0, t_len.min(gt.t), 0, 0, size);
            let latents = models.lam.extract(&models.store, &gt)?;
            let idx: Vec<Vec<usize>> = latents.iter().map(|l| l.indices.clone()).collect();
            let params = SampleParams {
                steps: self.cfg.wm.denoise_steps,
                guidance_scale: self.cfg.wm.guidance_scale,
                noise_seed: CounterRng::keyed(&[self.cfg.seed, hash_str("dual"), i as u64]).next_u64(),
            };
            let gt_pred = gt_lam_predict(models, &idx, &gt.frame(0), &params)?;
            let acts = &actions[i][..gt.t - 1];
            for a in acts {
                stream.extend(adapter.predict_indices(a));
            }
            let ad_pred = adapted_predict(models, adapter, acts, &gt.frame(0), &params)?;
            let gen = |c: &crate::synthenv::VideoClip| crate::training::crop_window(c, 1, c.t - 1, 0, 0, size);
            gt_psnr += crate::eval::psnr(&gen(&gt_pred), &gen(&gt))?;
            ad_psnr += crate::eval::psnr(&gen(&ad_pred), &gen(&gt))?;
        }
        Ok((gt_psnr / n as f64, ad_psnr / n as f64, stream))
    }

    pub fn plan(&self, model: &str, task_name: &str) -> Result<PlanArtifact> {
        let kind = TaskKind::parse(task_name)
            .ok_or_else(|| Error::Config(format!("unknown task `{task_name}`")))?;
        let pc = &self.cfg.plan;
        let task = make_task(
            kind,
            &self.cfg.env,
            pc.n_pairs,
            pc.horizon,
            pc.success_tol,
            CounterRng::keyed(&[self.cfg.seed, hash_str("task"), hash_str(task_name)]).next_u64(),
        );
        let size = self.cfg.lam.frame_size;
        write_json_atomic(&self.out.join("plan").join(format!("{task_name}_spec.json")), &task)?;
        let seed = CounterRng::keyed(&[self.cfg.seed, hash_str("plan"), self.seed]).next_u64();
        let outcome = if model == "oracle" {
            let env = self.cfg.env.clone();
            evaluate_task(
                &task,
                &self.cfg.env,
                pc,
                |pair| OracleEnvModel { env: env.clone(), init: pair.init.clone(), model_size: size },
                size,
                seed,
                self.exec,
            )?
        } else {
            let (models, _) = self.load_models(Path::new(model))?;
            let adapter_path = Path::new(model)
                .parent()
                .map(|p| p.join("adapter.ckpt"))
                .filter(|p| p.exists())
                .ok_or_else(|| Error::MissingArtifact("adapter.ckpt next to model checkpoint".into()))?;
            let mut adapter = crate::adaptation::Adapter::build(
                self.cfg.adapt.adapter_hidden,
                self.cfg.lam.codebook_size,
                self.cfg.lam.action_tokens,
                0,
            );
            load_checkpoint(&mut adapter.store, &adapter_path, &self.cfg.model_hash(), &[])?;
            let env = self.cfg.env.clone();
            evaluate_task(
                &task,
                &self.cfg.env,
                pc,
                |pair| WorldModelPlanner {
                    models: &models,
                    adapter: &adapter,
                    first_frame: crate::training::center_crop_frame(
                        &crate::synthenv::render(&pair.init, &env),
                        size,
                    ),
                    steps: self.cfg.wm.denoise_steps,
                    guidance_scale: self.cfg.wm.guidance_scale,
                    noise_base: seed,
                },
                size,
                seed,
                self.exec,
            )?
        };
        let art = PlanArtifact {
            task: task_name.to_string(),
            model: model.to_string(),
            success_rate: outcome.success_rate,
            per_pair_success: outcome.per_pair_success.clone(),
            per_pair_reward: outcome.per_pair_reward.clone(),
        };
        write_json_atomic(&self.out.join("plan").join(format!("{task_name}_{}.json", slug(model))), &art)?;
        println!("plan {task_name} with {model}: success {:.1}%", art.success_rate * 100.0);
        Ok(art)
    }

    /// Scan completed method stages across seeds and assemble the comparison
    /// document. Missing methods are listed as absent, never failures.
    pub fn report(&self) -> Result<Report> {
        let env_digest = crate::synthenv::env_config_hash(&self.cfg.env);
        let mut report = Report::new(self.cfg.digest(), env_digest.clone(), vec![]);
        let runs = self.out.join("runs");
        let mut seeds_seen: Vec<u64> = Vec::new();

        for (method, stage) in METHOD_STAGES {
            let mut found_any = false;
            let stage_root = runs.join(stage);
            let mut seeds: Vec<u64> = Vec::new();
            if stage_root.exists() {
                for entry in std::fs::read_dir(&stage_root)? {
                    let name = entry?.file_name().to_string_lossy().to_string();
                    if let Some(s) = name.strip_prefix("seed").and_then(|v| v.parse::<u64>().ok()) {
                        seeds.push(s);
                    }
                }
            }
            seeds.sort_unstable();
            for seed in seeds {
                let dir = self.stage_dir(stage, seed);
                let meta_path = dir.join("meta.json");
                if !meta_path.exists() {
                    continue;
                }
                let meta: StageMeta = read_json(&meta_path)?;
                if meta.config_digest != self.cfg.digest() {
                    return Err(Error::Incompatible(format!(
                        "stage {stage} seed{seed} was produced by a different config"
                    )));
                }
                found_any = true;
                if !seeds_seen.contains(&seed) {
                    seeds_seen.push(seed);
                }
                let ckpt = dir.join("checkpoint.ckpt");
                let mut row = MethodRow {
                    method: format!("{method}/seed{seed}"),
                    checkpoint_digest: Some(meta.checkpoint_digest.clone()),
                    collapse_alarm: Some(meta.collapse_alarm),
                    ..MethodRow::default()
                };
                if meta.collapse_alarm && stage == "naive_joint" {
                    // collapsed arms are reported from telemetry only
                    let telemetry = crate::training::read_telemetry(&dir.join("telemetry.jsonl"))?;
                    row.final_codebook = telemetry.last().and_then(|r| r.codebook);
                } else {
                    let e = self.eval(&ckpt, "base")?;
                    let p = self.probe(&ckpt)?;
                    row.psnr_db = Some(e.psnr_db);
                    row.ssim_x100 = Some(e.ssim_x100);
                    row.probe_l1 = Some(p.probe_l1);
                    row.probe_baseline_l1 = Some(p.baseline_l1);
                    let telemetry = crate::training::read_telemetry(&dir.join("telemetry.jsonl"))?;
                    row.final_codebook = telemetry.last().and_then(|r| r.codebook);
                }
                report.rows.push(row);
            }
            if !found_any {
                report.rows.push(MethodRow { method: method.into(), absent: true, ..MethodRow::default() });
            }
        }
        seeds_seen.sort_unstable();
        report.seeds = seeds_seen;

        let report_dir = self.out.join("report");
        write_json_atomic(&report_dir.join("report.json"), &report)?;
        self.telemetry_plots(&report_dir)?;
        println!("report: {} rows -> {}", report.rows.len(), report_dir.join("report.json").display());
        Ok(report)
    }

    /// Codebook-metric curves for every completed stage (collapse figures).
    fn telemetry_plots(&self, report_dir: &Path) -> Result<()> {
        for metric in ["utilization", "max_usage", "entropy"] {
            let mut series = Vec::new();
            for def in STAGES {
                let stage_root = self.out.join("runs").join(def.name);
                if !stage_root.exists() {
                    continue;
                }
                let mut seeds: Vec<u64> = std::fs::read_dir(&stage_root)?
                    .filter_map(|e| {
                        e.ok()?.file_name().to_string_lossy().strip_prefix("seed")?.parse().ok()
                    })
                    .collect();
                seeds.sort_unstable();
                for seed in seeds {
                    let path = self.stage_dir(def.name, seed).join("telemetry.jsonl");
                    if !path.exists() {
                        continue;
                    }
                    let telemetry = crate::training::read_telemetry(&path)?;
                    let points: Vec<(f32, f32)> = telemetry
                        .iter()
                        .filter_map(|r: &TelemetryRecord| {
                            let cb = r.codebook?;
                            let v = match metric {
                                "utilization" => cb.utilization,
                                "max_usage" => cb.max_usage,
                                _ => cb.entropy,
                            };
                            Some((r.step as f32, v))
                        })
                        .collect();
                    if !points.is_empty() {
                        series.push(Series { name: format!("{}/s{seed}", def.name), points });
                    }
                }
            }
            if !series.is_empty() {
                line_chart(
                    &format!("codebook {metric} during training"),
                    metric,
                    &series,
                    &report_dir.join(format!("codebook_{metric}.svg")),
                )?;
            }
        }
        Ok(())
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_alphanumeric() { c } else { '_' }).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeArtifact {
    pub module: String,
    pub probe_l1: f32,
    pub baseline_l1: f32,
    pub shuffled_l1: f32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub module: String,
    pub dataset: String,
    pub psnr_db: f64,
    pub ssim_x100: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptArtifact {
    pub module: String,
    pub dataset: String,
    pub adapter_holdout_acc: Vec<f32>,
    pub adapter_majority_baseline: Vec<f32>,
    pub degenerate_heads: Vec<bool>,
    pub gt_lam_psnr: f64,
    pub adapter_psnr: f64,
    pub adapter_flagged: bool,
    pub finetune_telemetry_digest: String,
    pub pre_finetune_digest: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub task: String,
    pub model: String,
    pub success_rate: f32,
    pub per_pair_success: Vec<bool>,
    pub per_pair_reward: Vec<f32>,
}
