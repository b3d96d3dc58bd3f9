use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetMeta, OfflineDataset, Transition};

/// Finite MDP with deterministic dynamics. Terminal states self-loop with
/// zero reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `next[s][a]`
    pub next: Vec<Vec<usize>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    pub terminal: Vec<usize>,
    pub start: usize,
}

/// Per-state sets of action indices the behavior policy may take.
pub type BehaviorSupport = Vec<Vec<usize>>;

impl TabularMdp {
    pub fn validate(&self) -> Result<(), DataError> {
        let cfg = |m: String| Err(DataError::Config(m));
        if self.n_states == 0 || self.n_actions == 0 {
            return cfg("an MDP needs at least one state and one action".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return cfg(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if self.start >= self.n_states {
            return cfg("start state out of range".into());
        }
        if self.next.len() != self.n_states || self.reward.len() != self.n_states {
            return cfg("tables must have one row per state".into());
        }
        for s in 0..self.n_states {
            if self.next[s].len() != self.n_actions || self.reward[s].len() != self.n_actions {
                return cfg(format!("row {s} is not fully populated"));
            }
            if self.next[s].iter().any(|&n| n >= self.n_states) {
                return cfg(format!("row {s} has a next state out of range"));
            }
            if self.reward[s].iter().any(|r| !r.is_finite()) {
                return cfg(format!("row {s} has a non-finite reward"));
            }
        }
        for &t in &self.terminal {
            if t >= self.n_states {
                return cfg("terminal state out of range".into());
            }
            if self.next[t].iter().any(|&n| n != t) || self.reward[t].iter().any(|&r| r != 0.0) {
                return cfg(format!(
                    "terminal state {t} must self-loop with zero reward"
                ));
            }
        }
        Ok(())
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal.contains(&s)
    }

    pub fn step(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let n = self.next[s][a];
        (n, self.reward[s][a], self.is_terminal(n))
    }

    pub fn one_hot_state(&self, s: usize) -> Vec<f64> {
        one_hot(s, self.n_states)
    }

    pub fn one_hot_action(&self, a: usize) -> Vec<f64> {
        one_hot(a, self.n_actions)
    }

    /// Uniformly random deterministic MDP with random nonempty supports.
    /// The last state is terminal; every other state may transition anywhere.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rng: &mut impl Rng,
    ) -> (Self, BehaviorSupport) {
        let term = n_states - 1;
        let mut next = vec![vec![term; n_actions]; n_states];
        let mut reward = vec![vec![0.0; n_actions]; n_states];
        for s in 0..term {
            for a in 0..n_actions {
                next[s][a] = rng.random_range(0..n_states);
                reward[s][a] = rng.random::<f64>();
            }
        }
        let mdp = Self {
            n_states,
            n_actions,
            next,
            reward,
            gamma,
            terminal: vec![term],
            start: 0,
        };
        let support = random_support(n_states, n_actions, 1, n_actions, rng);
        (mdp, support)
    }
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn random_support(
    n_states: usize,
    n_actions: usize,
    min: usize,
    max: usize,
    rng: &mut impl Rng,
) -> BehaviorSupport {
    let all: Vec<usize> = (0..n_actions).collect();
    (0..n_states)
        .map(|_| {
            let k = rng.random_range(min..=max.min(n_actions));
            let mut s: Vec<usize> = all.choose_multiple(rng, k).copied().collect();
            s.sort_unstable();
            s
        })
        .collect()
}

/// A forward-only ("stitching") MDP: every action of state `s` leads to a
/// later state, so episodes chain segments chosen at different states, and
/// the last state is terminal. Supports hold between 2 and 3 actions.
pub fn random_stitching_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
) -> (TabularMdp, BehaviorSupport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let term = n_states - 1;
    let mut next = vec![vec![term; n_actions]; n_states];
    let mut reward = vec![vec![0.0; n_actions]; n_states];
    for s in 0..term {
        for a in 0..n_actions {
            next[s][a] = rng.random_range(s + 1..n_states);
            reward[s][a] = rng.random::<f64>();
        }
    }
    let mdp = TabularMdp {
        n_states,
        n_actions,
        next,
        reward,
        gamma,
        terminal: vec![term],
        start: 0,
    };
    let support = random_support(n_states, n_actions, 2.min(n_actions), 3, &mut rng);
    (mdp, support)
}

/// Index encoding of a tabular dataset, kept alongside the one-hot vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularIndex {
    pub mdp: TabularMdp,
    pub support: BehaviorSupport,
    /// `(state, action, next_state)` per transition.
    pub indices: Vec<[usize; 3]>,
}

impl TabularIndex {
    /// Distinct actions observed at each state, ascending.
    pub fn observed_support(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.mdp.n_states];
        for &[s, a, _] in &self.indices {
            if !out[s].contains(&a) {
                out[s].push(a);
            }
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }
}

fn reaches_terminal(mdp: &TabularMdp, support: &BehaviorSupport) -> bool {
    let mut seen = vec![false; mdp.n_states];
    let mut stack = vec![mdp.start];
    while let Some(s) = stack.pop() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        if mdp.is_terminal(s) {
            return true;
        }
        for &a in &support[s] {
            stack.push(mdp.next[s][a]);
        }
    }
    false
}

/// Rolls out the uniform-over-support behavior policy from the start state.
/// Episodes end on entering a terminal state or after `max_len` steps.
pub fn generate_tabular_dataset(
    mdp: &TabularMdp,
    support: &BehaviorSupport,
    episodes: usize,
    max_len: usize,
    seed: u64,
) -> Result<OfflineDataset, DataError> {
    mdp.validate()?;
    if episodes == 0 {
        return Err(DataError::Config("episode count must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(DataError::Config(
            "episode length must be at least 1".into(),
        ));
    }
    if support.len() != mdp.n_states {
        return Err(DataError::Config(
            "one support set per state required".into(),
        ));
    }
    for (s, sup) in support.iter().enumerate() {
        if sup.is_empty() {
            return Err(DataError::Config(format!(
                "behavior support of state {s} is empty"
            )));
        }
        if sup.iter().any(|&a| a >= mdp.n_actions) {
            return Err(DataError::Config(format!(
                "support of state {s} names an unknown action"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::new();
    let mut indices = Vec::new();
    for _ in 0..episodes {
        let mut s = mdp.start;
        for _ in 0..max_len {
            if mdp.is_terminal(s) {
                break;
            }
            let a = *support[s].choose(&mut rng).expect("nonempty support");
            let (n, r, done) = mdp.step(s, a);
            transitions.push(Transition::new(
                mdp.one_hot_state(s),
                mdp.one_hot_action(a),
                r,
                mdp.one_hot_state(n),
                done,
            ));
            indices.push([s, a, n]);
            s = n;
            if done {
                break;
            }
        }
    }
    let mut warnings = Vec::new();
    if !reaches_terminal(mdp, support) {
        warnings.push("no terminal state is reachable under the behavior support".into());
    }
    let mut params = serde_json::Map::new();
    params.insert("episodes".into(), episodes.into());
    params.insert("max_len".into(), max_len.into());
    let meta = DatasetMeta {
        generator: "tabular".into(),
        params,
        seed,
        warnings,
        tabular: Some(TabularIndex {
            mdp: mdp.clone(),
            support: support.clone(),
            indices,
        }),
    };
    OfflineDataset::new(
        transitions,
        vec![0.0; mdp.n_actions],
        vec![1.0; mdp.n_actions],
        meta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stitching_mdp_is_valid_and_forward() {
        let (mdp, support) = random_stitching_mdp(8, 4, 0.9, 3);
        mdp.validate().unwrap();
        for s in 0..7 {
            assert!(mdp.next[s].iter().all(|&n| n > s));
            assert!((2..=3).contains(&support[s].len()));
        }
    }

    #[test]
    fn single_action_support_gives_single_action_data() {
        let (mdp, _) = random_stitching_mdp(8, 4, 0.9, 1);
        let support: BehaviorSupport = (0..8).map(|s| vec![s % 4]).collect();
        let ds = generate_tabular_dataset(&mdp, &support, 20, 50, 0).unwrap();
        let obs = ds.meta().tabular.as_ref().unwrap().observed_support();
        for (s, o) in obs.iter().enumerate() {
            assert!(o.is_empty() || o == &vec![s % 4]);
        }
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let (mdp, support) = random_stitching_mdp(8, 4, 0.9, 1);
        assert!(generate_tabular_dataset(&mdp, &support, 0, 50, 0).is_err());
    }

    #[test]
    fn unreachable_terminal_is_a_warning() {
        let mdp = TabularMdp {
            n_states: 3,
            n_actions: 2,
            next: vec![vec![0, 2], vec![1, 1], vec![2, 2]],
            reward: vec![vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]],
            gamma: 0.9,
            terminal: vec![2],
            start: 0,
        };
        let ds = generate_tabular_dataset(&mdp, &vec![vec![0], vec![0], vec![0]], 2, 5, 0).unwrap();
        assert_eq!(ds.meta().warnings.len(), 1);
        assert_eq!(ds.len(), 10);
    }

    #[test]
    fn bad_terminal_is_rejected() {
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 1,
            next: vec![vec![1], vec![0]],
            reward: vec![vec![0.0], vec![0.0]],
            gamma: 0.9,
            terminal: vec![1],
            start: 0,
        };
        assert!(mdp.validate().is_err());
    }
}
