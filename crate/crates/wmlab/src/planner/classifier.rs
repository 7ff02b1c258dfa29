use serde::{Deserialize, Serialize};
use wmlab_nn::CounterRng;

use super::tasks::{TaskKind, TaskSpec};
use crate::synthenv::{render, EnvConfig, Frame};
use crate::training::center_crop_frame;

/// Locally trained linear logistic classifier over |prediction − goal| pixel
/// differences; its logit optionally augments the planner reward.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuccessClassifier {
    pub w: Vec<f32>,
    pub b: f32,
}

impl SuccessClassifier {
    pub fn logit(&self, pred: &Frame, goal: &Frame) -> f32 {
        let mut z = self.b;
        for ((p, g), w) in pred.data.iter().zip(&goal.data).zip(&self.w) {
            z += w * (p - g).abs();
        }
        z
    }
}

/// Fit the classifier on env-labeled frames: success examples place the agent
/// within tolerance of the pair's goal, failures place it elsewhere.
pub fn train_success_classifier(
    env: &EnvConfig,
    task: &TaskSpec,
    model_size: usize,
    examples_per_pair: usize,
    seed: u64,
) -> SuccessClassifier {
    let mut xs: Vec<Vec<f32>> = Vec::new();
    let mut ys: Vec<f32> = Vec::new();
    for (i, pair) in task.pairs.iter().enumerate() {
        let goal = center_crop_frame(&render(&pair.goal_state, env), model_size);
        let mut rng = CounterRng::keyed(&[seed, i as u64]);
        for e in 0..examples_per_pair {
            let positive = e % 2 == 0;
            let mut state = pair.goal_state.clone();
            if positive {
                let r = task.success_tol * 0.5;
                state.agent_pos = [
                    (state.agent_pos[0] + rng.uniform_in(-r, r)).clamp(0.0, 1.0),
                    (state.agent_pos[1] + rng.uniform_in(-r, r)).clamp(0.0, 1.0),
                ];
                if matches!(task.kind, TaskKind::Push | TaskKind::Hold) {
                    state.objects[0].pos = state.agent_pos;
                }
            } else {
                state.agent_pos = [rng.uniform_in(0.05, 0.95), rng.uniform_in(0.05, 0.95)];
                if matches!(task.kind, TaskKind::Push | TaskKind::Hold) {
                    state.objects[0].pos = [rng.uniform_in(0.05, 0.95), rng.uniform_in(0.05, 0.95)];
                }
            }
            let f = center_crop_frame(&render(&state, env), model_size);
            xs.push(f.data.iter().zip(&goal.data).map(|(p, g)| (p - g).abs()).collect());
            ys.push(if positive { 1.0 } else { 0.0 });
        }
    }

    let d = xs[0].len();
    let mut w = vec![0.0f32; d];
    let mut b = 0.0f32;
    let lr = 0.5f32;
    for _ in 0..200 {
        let mut gw = vec![0.0f32; d];
        let mut gb = 0.0f32;
        for (x, &y) in xs.iter().zip(&ys) {
            let mut z = b;
            for (xi, wi) in x.iter().zip(&w) {
                z += xi * wi;
            }
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y;
            gb += err;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
        }
        let n = xs.len() as f32;
        b -= lr * gb / n;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
    }
    SuccessClassifier { w, b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::make_task;

    #[test]
    fn classifier_separates_goal_from_random_frames() {
        let env = EnvConfig::default();
        let task = make_task(TaskKind::Reach, &env, 4, 4, 0.05, 9);
        let cl = train_success_classifier(&env, &task, 32, 8, 1);
        let pair = &task.pairs[0];
        let goal = center_crop_frame(&render(&pair.goal_state, &env), 32);
        let pos = cl.logit(&goal, &goal);
        let mut far = pair.goal_state.clone();
        far.agent_pos = [
            (far.agent_pos[0] + 0.4).rem_euclid(0.9).max(0.05),
            (far.agent_pos[1] + 0.4).rem_euclid(0.9).max(0.05),
        ];
        let neg = cl.logit(&center_crop_frame(&render(&far, &env), 32), &goal);
        assert!(pos > neg, "goal frame logit {pos} should beat far frame {neg}");
    }
}
