//! Exact tabular ground truth: policy evaluation, value iteration, the
//! supported-argmax policy and the performance-difference identity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{BehaviorSupport, TabularMdp};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("performance gap mismatch: direct {direct}, lemma {lemma}")]
    Inconsistent { direct: f64, lemma: f64 },
    #[error("flow equations are singular")]
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TabularPolicy {
    Deterministic(Vec<usize>),
    /// `probs[s][a]`
    Stochastic(Vec<Vec<f64>>),
}

impl TabularPolicy {
    /// Uniform weight over each state's support.
    pub fn uniform(support: &BehaviorSupport, n_actions: usize) -> Self {
        TabularPolicy::Stochastic(
            support
                .iter()
                .map(|sup| {
                    let mut p = vec![0.0; n_actions];
                    for &a in sup {
                        p[a] = 1.0 / sup.len() as f64;
                    }
                    p
                })
                .collect(),
        )
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::InvalidPolicy(m));
        match self {
            TabularPolicy::Deterministic(a) => {
                if a.len() != mdp.n_states {
                    return bad(format!("{} entries for {} states", a.len(), mdp.n_states));
                }
                if let Some(s) = a.iter().position(|&x| x >= mdp.n_actions) {
                    return bad(format!("state {s} action out of range"));
                }
            }
            TabularPolicy::Stochastic(p) => {
                if p.len() != mdp.n_states {
                    return bad(format!("{} rows for {} states", p.len(), mdp.n_states));
                }
                for (s, row) in p.iter().enumerate() {
                    if row.len() != mdp.n_actions || row.iter().any(|&x| !(x >= 0.0)) {
                        return bad(format!("state {s} has a malformed distribution"));
                    }
                    if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                        return bad(format!("state {s} distribution does not sum to 1"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn probs(&self, s: usize, n_actions: usize) -> Vec<f64> {
        match self {
            TabularPolicy::Deterministic(a) => {
                let mut p = vec![0.0; n_actions];
                p[a[s]] = 1.0;
                p
            }
            TabularPolicy::Stochastic(p) => p[s].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl ValueTable {
    /// `max |Q(s,a) − r(s,a) − γ V(P(s,a))|`
    pub fn bellman_residual(&self, mdp: &TabularMdp) -> f64 {
        let mut res: f64 = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let want = mdp.reward[s][a] + mdp.gamma * self.v[mdp.next[s][a]];
                res = res.max((self.q[s][a] - want).abs());
            }
        }
        res
    }
}

fn q_from_v(mdp: &TabularMdp, v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| mdp.reward[s][a] + mdp.gamma * v[mdp.next[s][a]])
                .collect()
        })
        .collect()
}

fn expect(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(x, y)| x * y).sum()
}

/// Iterates the policy's Bellman operator until successive values differ by
/// at most 1e-13 in sup-norm.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<ValueTable, OracleError> {
    policy.validate(mdp)?;
    let probs: Vec<Vec<f64>> = (0..mdp.n_states)
        .map(|s| policy.probs(s, mdp.n_actions))
        .collect();
    let mut v = vec![0.0; mdp.n_states];
    for _ in 0..1_000_000 {
        let q = q_from_v(mdp, &v);
        let nv: Vec<f64> = (0..mdp.n_states)
            .map(|s| expect(&q[s], &probs[s]))
            .collect();
        let delta = nv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = nv;
        if delta <= 1e-13 {
            break;
        }
    }
    let q = q_from_v(mdp, &v);
    Ok(ValueTable { v, q })
}

fn transition_matrix(mdp: &TabularMdp, policy: &TabularPolicy) -> DMatrix<f64> {
    let n = mdp.n_states;
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for (a, w) in policy.probs(s, mdp.n_actions).iter().enumerate() {
            p[(s, mdp.next[s][a])] += w;
        }
    }
    p
}

/// Solves `(I − γ P_π) V = r_π` directly.
pub fn policy_evaluation_exact(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<ValueTable, OracleError> {
    policy.validate(mdp)?;
    let n = mdp.n_states;
    let a = DMatrix::identity(n, n) - transition_matrix(mdp, policy) * mdp.gamma;
    let r = DVector::from_iterator(
        n,
        (0..n).map(|s| expect(&mdp.reward[s], &policy.probs(s, mdp.n_actions))),
    );
    let v = a.lu().solve(&r).ok_or(OracleError::Singular)?;
    let v: Vec<f64> = v.iter().copied().collect();
    let q = q_from_v(mdp, &v);
    Ok(ValueTable { v, q })
}

/// Optimal values and a greedy policy (ties to the lowest action index).
pub fn value_iteration(mdp: &TabularMdp) -> (ValueTable, TabularPolicy) {
    let mut v = vec![0.0; mdp.n_states];
    loop {
        let q = q_from_v(mdp, &v);
        let nv: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = nv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = nv;
        if delta <= 1e-13 {
            break;
        }
    }
    let q = q_from_v(mdp, &v);
    let greedy = q.iter().map(|row| argmax_in(row, 0..row.len())).collect();
    (ValueTable { v, q }, TabularPolicy::Deterministic(greedy))
}

fn argmax_in(row: &[f64], actions: impl IntoIterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for a in actions {
        if best.is_none_or(|b| row[a] > row[b]) {
            best = Some(a);
        }
    }
    best.expect("nonempty action set")
}

/// Per state, the supported action with the largest `Q^β`; ties go to the
/// lowest index.
pub fn supported_argmax_policy(
    mdp: &TabularMdp,
    q_beta: &ValueTable,
    support: &BehaviorSupport,
) -> TabularPolicy {
    TabularPolicy::Deterministic(
        (0..mdp.n_states)
            .map(|s| {
                let mut sup = support[s].clone();
                sup.sort_unstable();
                argmax_in(&q_beta.q[s], sup)
            })
            .collect(),
    )
}

/// Normalised discounted state occupancy `d^π = (1−γ) e_start (I − γ P_π)^{-1}`.
pub fn occupancy(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    start: usize,
) -> Result<Vec<f64>, OracleError> {
    let n = mdp.n_states;
    let a = (DMatrix::identity(n, n) - transition_matrix(mdp, policy) * mdp.gamma).transpose();
    let mut e = DVector::zeros(n);
    e[start] = 1.0 - mdp.gamma;
    let d = a.lu().solve(&e).ok_or(OracleError::Singular)?;
    Ok(d.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceGap {
    /// `V^π(start) − V^β(start)` from separate evaluations.
    pub direct: f64,
    /// `1/(1−γ) Σ_s d^π(s) A^β(s, π)`.
    pub lemma: f64,
}

pub const GAP_TOLERANCE: f64 = 1e-8;

/// `J(π) − J(β)` computed two ways; fails if they disagree beyond 1e-8.
pub fn performance_gap(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    beta: &TabularPolicy,
    start: usize,
) -> Result<PerformanceGap, OracleError> {
    let vp = policy_evaluation(mdp, pi)?;
    let vb = policy_evaluation(mdp, beta)?;
    let direct = vp.v[start] - vb.v[start];
    let d = occupancy(mdp, pi, start)?;
    let mut acc = 0.0;
    for s in 0..mdp.n_states {
        let adv = expect(&vb.q[s], &pi.probs(s, mdp.n_actions)) - vb.v[s];
        acc += d[s] * adv;
    }
    let lemma = acc / (1.0 - mdp.gamma);
    if (direct - lemma).abs() > GAP_TOLERANCE {
        return Err(OracleError::Inconsistent { direct, lemma });
    }
    Ok(PerformanceGap { direct, lemma })
}

/// Numerical slack allowed below zero when checking `J(π) ≥ J(β)`.
pub const VIOLATION_TOLERANCE: f64 = 1e-10;

/// Outcome of the supported-argmax check over random MDPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub instances: usize,
    /// Instances with `J(π) − J(β) < −1e-10`.
    pub violations: Vec<usize>,
    /// Instances whose two gap computations disagreed beyond 1e-8.
    pub inconsistent: Vec<usize>,
    pub min_gap: f64,
    pub max_lemma_error: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.inconsistent.is_empty()
    }
}

/// For `instances` random deterministic MDPs with 2–10 states, 1–5 actions,
/// random behavior supports and γ ∈ [0.5, 0.95], compares the supported-argmax
/// policy of the uniform-over-support behavior against the behavior itself.
pub fn improvement_suite(instances: usize, seed: u64) -> Result<SuiteReport, OracleError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        instances,
        violations: Vec::new(),
        inconsistent: Vec::new(),
        min_gap: f64::INFINITY,
        max_lemma_error: 0.0,
    };
    for i in 0..instances {
        let n = rng.random_range(2..=10);
        let a = rng.random_range(1..=5);
        let gamma = rng.random_range(0.5..=0.95);
        let (mdp, support) = TabularMdp::random(n, a, gamma, &mut rng);
        let beta = TabularPolicy::uniform(&support, a);
        let q_beta = policy_evaluation_exact(&mdp, &beta)?;
        let pi = supported_argmax_policy(&mdp, &q_beta, &support);
        let gap = match performance_gap(&mdp, &pi, &beta, mdp.start) {
            Ok(g) => g,
            Err(OracleError::Inconsistent { direct, lemma }) => {
                report.inconsistent.push(i);
                PerformanceGap { direct, lemma }
            }
            Err(e) => return Err(e),
        };
        report.max_lemma_error = report.max_lemma_error.max((gap.direct - gap.lemma).abs());
        report.min_gap = report.min_gap.min(gap.direct);
        if gap.direct < -VIOLATION_TOLERANCE {
            report.violations.push(i);
        }
    }
    Ok(report)
}
