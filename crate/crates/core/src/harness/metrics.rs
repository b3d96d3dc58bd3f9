use crate::data::{BehaviorSupport, OfflineDataset, TabularMdp};
use crate::envs::ToyPathEnv;
use crate::nets::{NetError, Network};

/// Mean `|y|` of a path sampled at every grid column: the distance from the
/// straight line `y = 0` between start and target.
pub fn mean_abs_deviation(env: &ToyPathEnv, states: &[Vec<f64>]) -> f64 {
    let ys = env.y_at_columns(states);
    ys.iter().map(|y| y.abs()).sum::<f64>() / ys.len().max(1) as f64
}

/// Mean and population standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `s_0 = v_0`, `s_t = coef · v_t + (1 − coef) · s_{t−1}`.
pub fn ema(values: &[f64], coef: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        let s = match out.last() {
            None => v,
            Some(&prev) => coef * v + (1.0 - coef) * prev,
        };
        out.push(s);
    }
    out
}

/// Splits a dataset into episodes at `done` flags (and at discontinuities
/// where a transition does not start where the previous one ended), and
/// returns the visited states of each.
pub fn dataset_paths(ds: &OfflineDataset) -> Vec<Vec<Vec<f64>>> {
    let mut paths = Vec::new();
    let mut cur: Vec<Vec<f64>> = Vec::new();
    for t in ds.transitions() {
        if cur.last().is_some_and(|last| *last != t.state) {
            paths.push(std::mem::take(&mut cur));
        }
        if cur.is_empty() {
            cur.push(t.state.clone());
        }
        cur.push(t.next_state.clone());
        if t.done {
            paths.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        paths.push(cur);
    }
    paths
}

/// Index of the one-hot action in `support` closest (Euclidean) to `action`;
/// ties go to the lower action index.
pub fn nearest_support_action(action: &[f64], support: &[usize]) -> Option<usize> {
    let dist = |a: usize| -> f64 {
        action
            .iter()
            .enumerate()
            .map(|(k, v)| (v - if k == a { 1.0 } else { 0.0 }).powi(2))
            .sum()
    };
    let mut best: Option<(usize, f64)> = None;
    for &a in support {
        let d = dist(a);
        match best {
            Some((ba, bd)) if d > bd || (d == bd && a > ba) => {}
            _ => best = Some((a, d)),
        }
    }
    best.map(|(a, _)| a)
}

/// Share of probability below which a dataset action counts as not receiving
/// policy mass.
pub const MASS_THRESHOLD: f64 = 0.05;

/// Per tabular state, the nearest observed action to `π(s)` and the observed
/// actions whose policy output coordinate is at least [`MASS_THRESHOLD`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSelection {
    /// `None` for states without observed actions.
    pub nearest: Vec<Option<usize>>,
    pub with_mass: Vec<Vec<usize>>,
}

impl TabularSelection {
    /// Total number of distinct `(state, action)` dataset pairs receiving mass.
    pub fn mass_count(&self) -> usize {
        self.with_mass.iter().map(Vec::len).sum()
    }
}

pub fn tabular_selection(
    policy: &Network,
    mdp: &TabularMdp,
    observed: &BehaviorSupport,
) -> Result<TabularSelection, NetError> {
    let mut nearest = Vec::with_capacity(mdp.n_states);
    let mut with_mass = Vec::with_capacity(mdp.n_states);
    for (s, support) in observed.iter().enumerate() {
        if support.is_empty() {
            nearest.push(None);
            with_mass.push(Vec::new());
            continue;
        }
        let p = policy.act(&mdp.one_hot_state(s))?;
        nearest.push(nearest_support_action(&p, support));
        with_mass.push(
            support
                .iter()
                .copied()
                .filter(|&a| p[a] >= MASS_THRESHOLD)
                .collect(),
        );
    }
    Ok(TabularSelection { nearest, with_mass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_follows_recurrence() {
        let e = ema(&[1.0, 0.0, 0.0], 0.3);
        assert_eq!(e[0], 1.0);
        assert!((e[1] - 0.7).abs() < 1e-15);
        assert!((e[2] - 0.49).abs() < 1e-15);
        assert!(ema(&[], 0.3).is_empty());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn nearest_action_ties_go_low() {
        assert_eq!(nearest_support_action(&[0.5, 0.5, 0.0], &[0, 1]), Some(0));
        assert_eq!(nearest_support_action(&[0.1, 0.2, 0.7], &[0, 1]), Some(1));
        assert_eq!(nearest_support_action(&[0.1, 0.2, 0.7], &[]), None);
    }
}
