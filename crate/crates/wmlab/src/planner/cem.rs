use wmlab_nn::CounterRng;

use super::classifier::SuccessClassifier;
use super::reward;
use crate::adaptation::Adapter;
use crate::config::PlanConfig;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::lam::LatentAction;
use crate::synthenv::{render, step, EnvConfig, EnvState, Frame, RealAction};
use crate::training::{center_crop_frame, Models};
use crate::wm::{sample, SampleParams};

/// Anything that can roll a candidate action sequence forward to a final
/// frame. `candidate_idx` pins per-candidate noise seeds for reproducibility.
pub trait PlanModel {
    fn predict_final_frame(&self, actions: &[RealAction], candidate_idx: usize) -> Result<Frame>;
}

/// The true environment as the model: step, render, done.
pub struct OracleEnvModel {
    pub env: EnvConfig,
    pub init: EnvState,
    pub model_size: usize,
}

impl PlanModel for OracleEnvModel {
    fn predict_final_frame(&self, actions: &[RealAction], _candidate_idx: usize) -> Result<Frame> {
        let mut state = self.init.clone();
        for a in actions {
            state = step(&state, a, &self.env)?;
        }
        Ok(center_crop_frame(&render(&state, &self.env), self.model_size))
    }
}

/// Learned world model behind the adapter: real actions are translated to
/// latent codes, then sampled from the first frame.
pub struct WorldModelPlanner<'a> {
    pub models: &'a Models,
    pub adapter: &'a Adapter,
    pub first_frame: Frame,
    pub steps: usize,
    pub guidance_scale: f32,
    pub noise_base: u64,
}

impl PlanModel for WorldModelPlanner<'_> {
    fn predict_final_frame(&self, actions: &[RealAction], candidate_idx: usize) -> Result<Frame> {
        if actions.len() + 1 > self.models.wm.cfg.max_frames {
            return Err(Error::Config(format!(
                "horizon {} exceeds rollout capacity {}",
                actions.len(),
                self.models.wm.cfg.max_frames - 1
            )));
        }
        let latents: Vec<LatentAction> =
            actions.iter().map(|a| self.adapter.predict_latent(self.models, a)).collect();
        let params = SampleParams {
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            noise_seed: CounterRng::keyed(&[self.noise_base, candidate_idx as u64]).next_u64(),
        };
        let clip = sample(&self.models.store, &self.models.wm, &self.first_frame, &latents, &params)?;
        Ok(clip.frame(clip.t - 1))
    }
}

pub struct PlanResult {
    /// The best-scoring evaluated sequence (ties: first encountered).
    pub actions: Vec<RealAction>,
    pub best_reward: f32,
    /// Rewards of every candidate evaluated in the final iteration.
    pub final_rewards: Vec<f32>,
    pub n_evaluated: usize,
}

fn decode(values: &[f32], max_step: f32) -> Vec<RealAction> {
    values
        .chunks_exact(3)
        .map(|c| {
            let (mut dx, mut dy) = (c[0], c[1]);
            let norm = dx.hypot(dy);
            if norm > max_step {
                let s = max_step / norm * 0.999;
                dx *= s;
                dy *= s;
            }
            RealAction::cartesian(dx, dy, c[2] > 0.0)
        })
        .collect()
}

/// Cross-entropy-method search: sample candidate sequences from a diagonal
/// Gaussian, score them with the model + reward, refit to the top elites, and
/// return the best sequence ever evaluated (which always scores at least as
/// high as every final-iteration candidate).
pub fn plan<M: PlanModel + Sync + ?Sized>(
    model: &M,
    goal: &Frame,
    horizon: usize,
    cfg: &PlanConfig,
    max_step: f32,
    classifier: Option<(&SuccessClassifier, f32)>,
    seed: u64,
) -> Result<PlanResult> {
    if cfg.n_samples < 2 {
        return Err(Error::Config("plan needs n_samples >= 2".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("plan horizon must be >= 1".into()));
    }
    let dim = horizon * 3;
    let mut mean = vec![0.0f32; dim];
    let mut std: Vec<f32> = (0..dim)
        .map(|i| if i % 3 == 2 { 1.0 } else { max_step * 0.5 })
        .collect();

    let mut best_reward = f32::NEG_INFINITY;
    let mut best_actions: Vec<RealAction> = Vec::new();
    let mut final_rewards: Vec<f32> = Vec::new();
    let mut n_evaluated = 0usize;

    for iter in 0..cfg.n_iters.max(1) {
        // n_samples Gaussian draws plus the current mean as a probe candidate
        let mut raw: Vec<Vec<f32>> = Vec::with_capacity(cfg.n_samples + 1);
        for c in 0..cfg.n_samples {
            let mut rng = CounterRng::keyed(&[seed, iter as u64, c as u64]);
            raw.push((0..dim).map(|i| mean[i] + std[i] * rng.normal()).collect());
        }
        raw.push(mean.clone());

        let candidates: Vec<Vec<RealAction>> = raw.iter().map(|v| decode(v, max_step)).collect();
        let rewards_r: Vec<Result<f32>> = map_indexed(Exec::Sequential, candidates.len(), |c| {
            let final_frame = model.predict_final_frame(&candidates[c], c)?;
            let logit = classifier.map(|(cl, _)| cl.logit(&final_frame, goal));
            let lambda = classifier.map(|(_, l)| l).unwrap_or(0.0);
            reward(&final_frame, goal, logit, lambda)
        });
        let mut rewards = Vec::with_capacity(rewards_r.len());
        for r in rewards_r {
            rewards.push(r?);
        }
        n_evaluated += rewards.len();

        for (c, &r) in rewards.iter().enumerate() {
            if r > best_reward {
                best_reward = r;
                best_actions = candidates[c].clone();
            }
        }

        // refit to the elites of the Gaussian draws
        let n_elite = ((cfg.n_samples as f32 * cfg.elite_frac).ceil() as usize).max(1);
        let mut order: Vec<usize> = (0..cfg.n_samples).collect();
        order.sort_by(|&a, &b| rewards[b].partial_cmp(&rewards[a]).unwrap().then(a.cmp(&b)));
        let elites = &order[..n_elite];
        for i in 0..dim {
            let m = elites.iter().map(|&e| raw[e][i]).sum::<f32>() / n_elite as f32;
            let v = elites.iter().map(|&e| (raw[e][i] - m) * (raw[e][i] - m)).sum::<f32>()
                / n_elite as f32;
            mean[i] = m;
            std[i] = v.sqrt().max(0.01);
        }
        final_rewards = rewards;
    }

    Ok(PlanResult { actions: best_actions, best_reward, final_rewards, n_evaluated })
}
