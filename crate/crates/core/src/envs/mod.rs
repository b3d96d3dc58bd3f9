//! Executable environments for evaluating trained policies.

mod tabular;
mod toy;

pub use tabular::TabularEnv;
pub use toy::{toy_grid, ToyPathEnv, TOY_POINTS, TOY_X_END, TOY_X_START};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// Discount ticks consumed by this step.
    pub duration: f64,
    /// The action left the admissible range and was clamped.
    pub clamped: bool,
}

pub trait Env {
    fn reset(&self) -> Vec<f64>;
    fn step(&self, state: &[f64], action: &[f64]) -> EnvStep;
    fn gamma(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub discounted_return: f64,
    pub undiscounted_return: f64,
    pub steps: usize,
    /// `(state, action)` per step.
    pub trajectory: Vec<(Vec<f64>, Vec<f64>)>,
    pub rewards: Vec<f64>,
    pub durations: Vec<f64>,
    pub final_state: Vec<f64>,
    pub elapsed_ticks: f64,
    pub reached_target: bool,
    pub clamped_actions: usize,
}

impl RolloutResult {
    /// `Σ γ^{T_k} r_k` with `T_k` the ticks elapsed before step `k`.
    pub fn recompute_discounted(&self, gamma: f64) -> f64 {
        let mut t = 0.0;
        let mut total = 0.0;
        for (r, d) in self.rewards.iter().zip(&self.durations) {
            total += gamma.powf(t) * r;
            t += d;
        }
        total
    }

    /// Visited states including the final one.
    pub fn states(&self) -> Vec<Vec<f64>> {
        let mut s: Vec<Vec<f64>> = self.trajectory.iter().map(|(s, _)| s.clone()).collect();
        s.push(self.final_state.clone());
        s
    }
}

/// Runs `policy` from the environment's start state for at most `max_steps`.
pub fn rollout<E: Env + ?Sized>(
    env: &E,
    mut policy: impl FnMut(&[f64]) -> Vec<f64>,
    max_steps: usize,
) -> RolloutResult {
    let gamma = env.gamma();
    let mut state = env.reset();
    let mut out = RolloutResult {
        discounted_return: 0.0,
        undiscounted_return: 0.0,
        steps: 0,
        trajectory: Vec::new(),
        rewards: Vec::new(),
        durations: Vec::new(),
        final_state: state.clone(),
        elapsed_ticks: 0.0,
        reached_target: false,
        clamped_actions: 0,
    };
    for _ in 0..max_steps {
        let action = policy(&state);
        let st = env.step(&state, &action);
        out.discounted_return += gamma.powf(out.elapsed_ticks) * st.reward;
        out.undiscounted_return += st.reward;
        out.elapsed_ticks += st.duration;
        out.clamped_actions += st.clamped as usize;
        out.rewards.push(st.reward);
        out.durations.push(st.duration);
        out.trajectory
            .push((std::mem::replace(&mut state, st.next), action));
        out.steps += 1;
        if st.done {
            out.reached_target = true;
            break;
        }
    }
    out.final_state = state;
    out
}
