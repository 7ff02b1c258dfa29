//! Sampling-based model-predictive control over a world model (or the true
//! environment as an oracle), with cross-entropy-method search over real
//! action sequences.

mod cem;
mod classifier;
mod tasks;

pub use cem::{plan, OracleEnvModel, PlanModel, PlanResult, WorldModelPlanner};
pub use classifier::{train_success_classifier, SuccessClassifier};
pub use tasks::{make_task, TaskKind, TaskPair, TaskSpec};

use crate::config::PlanConfig;
use crate::error::Result;
use crate::exec::{map_indexed, Exec};
use crate::synthenv::{render, step, EnvConfig, EnvState, Frame};
use crate::training::center_crop_frame;

/// reward = −MSE(final predicted frame, goal frame) + λ·classifier_logit.
pub fn reward(final_frame: &Frame, goal: &Frame, classifier_logit: Option<f32>, lambda: f32) -> Result<f32> {
    if (final_frame.h, final_frame.w) != (goal.h, goal.w) {
        return Err(crate::error::Error::Shape("reward frames differ in shape".into()));
    }
    let mut mse = 0.0f64;
    for (a, b) in final_frame.data.iter().zip(&goal.data) {
        let d = (*a - *b) as f64;
        mse += d * d;
    }
    mse /= final_frame.data.len() as f64;
    Ok(-(mse as f32) + classifier_logit.map(|l| lambda * l).unwrap_or(0.0))
}

pub struct TaskOutcome {
    pub success_rate: f32,
    pub per_pair_success: Vec<bool>,
    pub per_pair_reward: Vec<f32>,
}

/// Plan every (initial, goal) pair, execute the chosen sequence in the REAL
/// environment, and apply the env-side success predicate. World-model outputs
/// never decide success.
pub fn evaluate_task<M: PlanModel + Sync>(
    task: &TaskSpec,
    env: &EnvConfig,
    plan_cfg: &PlanConfig,
    make_model: impl Fn(&TaskPair) -> M + Sync,
    model_size: usize,
    seed: u64,
    exec: Exec,
) -> Result<TaskOutcome> {
    let results = map_indexed(exec, task.pairs.len(), |i| -> Result<(bool, f32)> {
        let pair = &task.pairs[i];
        let goal = center_crop_frame(&render(&pair.goal_state, env), model_size);
        let model = make_model(pair);
        let result = plan(&model, &goal, task.horizon, plan_cfg, env.max_step, None, seed.wrapping_add(i as u64))?;
        // execute in the real environment
        let mut state = pair.init.clone();
        for a in &result.actions {
            state = step(&state, a, env)?;
        }
        Ok((task.success_for(pair, &state), result.best_reward))
    });
    let mut per_pair_success = Vec::with_capacity(task.pairs.len());
    let mut per_pair_reward = Vec::with_capacity(task.pairs.len());
    for r in results {
        let (ok, rew) = r?;
        per_pair_success.push(ok);
        per_pair_reward.push(rew);
    }
    let successes = per_pair_success.iter().filter(|&&s| s).count();
    Ok(TaskOutcome {
        success_rate: successes as f32 / task.pairs.len() as f32,
        per_pair_success,
        per_pair_reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::RealAction;

    fn frame_of(v: f32) -> Frame {
        Frame { h: 4, w: 4, data: vec![v; 4 * 4 * 3] }
    }

    #[test]
    fn reward_identities() {
        let goal = frame_of(0.5);
        // equal frames: mse term 0 (maximal without classifier)
        assert_eq!(reward(&frame_of(0.5), &goal, None, 1.0).unwrap(), 0.0);
        // the closer candidate wins
        let near = reward(&frame_of(0.55), &goal, None, 1.0).unwrap();
        let far = reward(&frame_of(0.9), &goal, None, 1.0).unwrap();
        assert!(near > far);
        // lambda 0 ignores the classifier exactly
        let with = reward(&frame_of(0.7), &goal, Some(3.0), 0.0).unwrap();
        let without = reward(&frame_of(0.7), &goal, None, 1.0).unwrap();
        assert_eq!(with, without);
        // lambda 1 adds the logit
        let boosted = reward(&frame_of(0.7), &goal, Some(3.0), 1.0).unwrap();
        assert!((boosted - (without + 3.0)).abs() < 1e-7);
    }

    #[test]
    fn success_is_env_grounded() {
        let env = EnvConfig::default();
        let task = make_task(TaskKind::Reach, &env, 3, 2, 0.05, 42);
        let cfg = PlanConfig { n_samples: 4, n_iters: 1, ..PlanConfig::default() };
        // a "model" that always predicts the goal perfectly would score high,
        // but success still comes from stepping the real env
        struct Flattering;
        impl PlanModel for Flattering {
            fn predict_final_frame(&self, _a: &[RealAction], _i: usize) -> crate::error::Result<Frame> {
                Ok(Frame { h: 32, w: 32, data: vec![0.0; 32 * 32 * 3] })
            }
        }
        let out = evaluate_task(&task, &env, &cfg, |_| Flattering, 32, 1, Exec::Sequential).unwrap();
        assert_eq!(out.per_pair_success.len(), 3);
    }
}
