//! Offline datasets: representation, batch sampling, file format and the
//! toy-path / tabular generators.

mod io;
mod tabular;
mod toy;

pub use io::{from_jsonl_str, load_dataset, save_dataset, to_jsonl_string};
pub use tabular::{
    generate_tabular_dataset, random_stitching_mdp, BehaviorSupport, TabularIndex, TabularMdp,
};
pub use toy::{expert_paths, generate_toy_path_dataset, ToyConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("transition {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// One experience tuple. `duration` is the number of discount ticks the
/// transition consumes (1 for ordinary single-step transitions); the
/// bootstrap term of its Bellman target is discounted by `γ^duration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub duration: f64,
}

impl Transition {
    pub fn new(
        state: Vec<f64>,
        action: Vec<f64>,
        reward: f64,
        next_state: Vec<f64>,
        done: bool,
    ) -> Self {
        Self {
            state,
            action,
            reward,
            next_state,
            done,
            duration: 1.0,
        }
    }
}

/// Where a dataset came from, echoed into its file header.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabular: Option<TabularIndex>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    transitions: Vec<Transition>,
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    meta: DatasetMeta,
}

/// A sampled batch laid out as row-major tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub done: Vec<bool>,
    pub durations: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl OfflineDataset {
    /// Validates and wraps a transition list. Bounds are per action coordinate.
    pub fn new(
        transitions: Vec<Transition>,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        meta: DatasetMeta,
    ) -> Result<Self, DataError> {
        let first = transitions.first().ok_or(DataError::Empty)?;
        let state_dim = first.state.len();
        let action_dim = first.action.len();
        let bad = |index: usize, reason: String| DataError::Invalid { index, reason };
        if action_low.len() != action_dim || action_high.len() != action_dim {
            return Err(bad(0, format!("bounds must have {action_dim} coordinates")));
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l <= h)) {
            return Err(bad(0, "action-low exceeds action-high".into()));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != state_dim || t.next_state.len() != state_dim {
                return Err(bad(i, format!("state dims differ from {state_dim}")));
            }
            if t.action.len() != action_dim {
                return Err(bad(i, format!("action dim differs from {action_dim}")));
            }
            if !t.reward.is_finite() {
                return Err(bad(i, "reward is not finite".into()));
            }
            if !(t.duration.is_finite() && t.duration >= 0.0) {
                return Err(bad(i, "duration must be finite and nonnegative".into()));
            }
            if t.state
                .iter()
                .chain(&t.next_state)
                .chain(&t.action)
                .any(|v| !v.is_finite())
            {
                return Err(bad(i, "non-finite state or action".into()));
            }
            for (k, a) in t.action.iter().enumerate() {
                if *a < action_low[k] || *a > action_high[k] {
                    return Err(bad(
                        i,
                        format!(
                            "action[{k}] = {a} outside [{}, {}]",
                            action_low[k], action_high[k]
                        ),
                    ));
                }
            }
        }
        Ok(Self {
            transitions,
            state_dim,
            action_dim,
            action_low,
            action_high,
            meta,
        })
    }

    /// Uses the coordinatewise min/max of the dataset's actions as bounds.
    pub fn with_data_bounds(
        transitions: Vec<Transition>,
        meta: DatasetMeta,
    ) -> Result<Self, DataError> {
        let first = transitions.first().ok_or(DataError::Empty)?;
        let mut low = first.action.clone();
        let mut high = first.action.clone();
        for t in &transitions {
            for (k, a) in t.action.iter().enumerate().take(low.len()) {
                low[k] = low[k].min(*a);
                high[k] = high[k].max(*a);
            }
        }
        Self::new(transitions, low, high, meta)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    /// Uniform with-replacement sample.
    pub fn sample_indices(
        &self,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<usize>, DataError> {
        if self.transitions.is_empty() {
            return Err(DataError::Empty);
        }
        if batch_size == 0 {
            return Err(DataError::ZeroBatch);
        }
        Ok((0..batch_size)
            .map(|_| rng.random_range(0..self.transitions.len()))
            .collect())
    }

    pub fn sample_batch(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Batch, DataError> {
        let idx = self.sample_indices(batch_size, rng)?;
        Ok(self.gather(&idx))
    }

    /// The batch made of the given transition indices, in order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let n = indices.len();
        let mut s = Vec::with_capacity(n * self.state_dim);
        let mut a = Vec::with_capacity(n * self.action_dim);
        let mut s2 = Vec::with_capacity(n * self.state_dim);
        let mut r = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        let mut dur = Vec::with_capacity(n);
        for &i in indices {
            let t = &self.transitions[i];
            s.extend_from_slice(&t.state);
            a.extend_from_slice(&t.action);
            s2.extend_from_slice(&t.next_state);
            r.push(t.reward);
            d.push(t.done);
            dur.push(t.duration);
        }
        let mk = |dim: usize, v: Vec<f64>| Tensor::new(vec![n, dim], v).expect("consistent dims");
        Batch {
            indices: indices.to_vec(),
            states: mk(self.state_dim, s),
            actions: mk(self.action_dim, a),
            rewards: r,
            next_states: mk(self.state_dim, s2),
            done: d,
            durations: dur,
        }
    }

    /// Every transition as one batch.
    pub fn full_batch(&self) -> Batch {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(&all)
    }
}
