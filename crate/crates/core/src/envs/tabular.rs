use serde::{Deserialize, Serialize};

use crate::data::TabularMdp;

use super::{Env, EnvStep};

/// A [`TabularMdp`] seen through one-hot state vectors. Continuous action
/// vectors are mapped to the nearest one-hot action (ties to the lower index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularEnv {
    pub mdp: TabularMdp,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp) -> Self {
        Self { mdp }
    }

    pub fn state_index(&self, state: &[f64]) -> usize {
        argmax(state)
    }

    /// Nearest one-hot action; with equal norms this is the argmax.
    pub fn action_index(&self, action: &[f64]) -> usize {
        argmax(action)
    }
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl Env for TabularEnv {
    fn reset(&self) -> Vec<f64> {
        self.mdp.one_hot_state(self.mdp.start)
    }

    fn step(&self, state: &[f64], action: &[f64]) -> EnvStep {
        let s = self.state_index(state);
        let a = self.action_index(action);
        let (n, r, done) = self.mdp.step(s, a);
        EnvStep {
            next: self.mdp.one_hot_state(n),
            reward: r,
            done,
            duration: 1.0,
            clamped: action.len() != self.mdp.n_actions,
        }
    }

    fn gamma(&self) -> f64 {
        self.mdp.gamma
    }
}
