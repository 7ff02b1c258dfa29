use serde::{Deserialize, Serialize};
use wmlab_nn::CounterRng;

use crate::synthenv::{initial_state, EnvConfig, EnvState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Move the agent to a target position.
    Reach,
    /// Carry object 0 to a target position.
    Push,
    /// End the episode gripping object 0.
    Hold,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reach" => Some(TaskKind::Reach),
            "push" => Some(TaskKind::Push),
            "hold" => Some(TaskKind::Hold),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskPair {
    pub init: EnvState,
    pub goal_state: EnvState,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub pairs: Vec<TaskPair>,
    pub horizon: usize,
    pub success_tol: f32,
}

impl TaskSpec {
    /// Env-side ground truth; evaluated on real environment states only.
    pub fn success_for(&self, pair: &TaskPair, final_state: &EnvState) -> bool {
        let dist = |a: [f32; 2], b: [f32; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
        match self.kind {
            TaskKind::Reach => dist(final_state.agent_pos, pair.goal_state.agent_pos) <= self.success_tol,
            TaskKind::Push => {
                dist(final_state.objects[0].pos, pair.goal_state.objects[0].pos) <= self.success_tol
            }
            TaskKind::Hold => final_state.held_object == Some(0),
        }
    }
}

/// Build a task's (initial, goal) pairs. Goals are constructed reachable
/// within the horizon's displacement budget.
pub fn make_task(
    kind: TaskKind,
    env: &EnvConfig,
    n_pairs: usize,
    horizon: usize,
    success_tol: f32,
    seed: u64,
) -> TaskSpec {
    let budget = 0.6 * horizon as f32 * env.max_step;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let mut rng = CounterRng::keyed(&[seed, i as u64, 0]);
        let mut init = initial_state(env, &mut rng);
        let target = |rng: &mut CounterRng, from: [f32; 2]| -> [f32; 2] {
            let angle = rng.uniform_in(-std::f32::consts::PI, std::f32::consts::PI);
            let r = rng.uniform_in(0.15, budget.max(0.2));
            [
                (from[0] + r * angle.cos()).clamp(0.1, 0.9),
                (from[1] + r * angle.sin()).clamp(0.1, 0.9),
            ]
        };
        let goal_state = match kind {
            TaskKind::Reach => {
                let mut g = init.clone();
                g.agent_pos = target(&mut rng, init.agent_pos);
                g
            }
            TaskKind::Push => {
                // start the agent next to object 0 so a grab is feasible
                if !init.objects.is_empty() {
                    init.agent_pos = [
                        (init.objects[0].pos[0] + 0.05).clamp(0.05, 0.95),
                        init.objects[0].pos[1].clamp(0.05, 0.95),
                    ];
                }
                let mut g = init.clone();
                let dst = target(&mut rng, init.objects[0].pos);
                g.objects[0].pos = dst;
                g.agent_pos = dst;
                g.held_object = Some(0);
                g
            }
            TaskKind::Hold => {
                let mut g = init.clone();
                g.agent_pos = g.objects[0].pos;
                g.held_object = Some(0);
                g
            }
        };
        pairs.push(TaskPair { init, goal_state });
    }
    TaskSpec {
        task_id: format!("{kind:?}").to_lowercase(),
        kind,
        pairs,
        horizon,
        success_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tasks_serialize_and_pairs_count() {
        let env = EnvConfig::default();
        let t = make_task(TaskKind::Reach, &env, 5, 4, 0.05, 3);
        assert_eq!(t.pairs.len(), 5);
        let json = serde_json::to_string(&t).unwrap();
        let back: TaskSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.pairs.len(), 5);
        assert_eq!(back.kind, TaskKind::Reach);
    }

    #[test]
    fn reach_success_predicate_uses_distance() {
        let env = EnvConfig::default();
        let t = make_task(TaskKind::Reach, &env, 1, 4, 0.05, 4);
        let pair = &t.pairs[0];
        let mut exact = pair.init.clone();
        exact.agent_pos = pair.goal_state.agent_pos;
        assert!(t.success_for(pair, &exact));
        let mut off = pair.init.clone();
        off.agent_pos = [
            pair.goal_state.agent_pos[0] + 0.2,
            pair.goal_state.agent_pos[1],
        ];
        assert!(!t.success_for(pair, &off));
    }

    #[test]
    fn hold_success_checks_grip() {
        let env = EnvConfig::default();
        let t = make_task(TaskKind::Hold, &env, 1, 4, 0.05, 5);
        let pair = &t.pairs[0];
        let mut s = pair.init.clone();
        s.held_object = Some(0);
        assert!(t.success_for(pair, &s));
        s.held_object = None;
        assert!(!t.success_for(pair, &s));
    }

    #[test]
    fn goals_are_reachable_within_budget() {
        let env = EnvConfig::default();
        let t = make_task(TaskKind::Reach, &env, 30, 4, 0.05, 6);
        for p in &t.pairs {
            let d = (p.init.agent_pos[0] - p.goal_state.agent_pos[0])
                .hypot(p.init.agent_pos[1] - p.goal_state.agent_pos[1]);
            assert!(d <= 4.0 * env.max_step + 1e-6, "goal {d} beyond horizon budget");
        }
    }
}
