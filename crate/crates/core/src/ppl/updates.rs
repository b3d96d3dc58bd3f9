//! Single gradient steps of every network in the saddle problem.

use rand::Rng;

use super::{PplError, SupportIndex};
use crate::autodiff::{AdamState, Graph, Tensor, Var};
use crate::data::{Batch, OfflineDataset};
use crate::nets::{concat_rows, Network};

/// An optimiser bound to one network.
#[derive(Debug, Clone)]
pub struct Trainee {
    pub net: Network,
    pub opt: AdamState,
}

impl Trainee {
    pub fn new(net: Network, lr: f64) -> Self {
        let opt = AdamState::new(net.param_count(), lr);
        Self { net, opt }
    }

    fn apply_gradient(&mut self, grad: &[f64]) -> Result<(), PplError> {
        self.opt.step(self.net.params_mut(), grad)?;
        Ok(())
    }
}

/// How the next-state value of the Bellman target is formed.
#[derive(Debug, Clone, Copy)]
pub enum BootstrapSource<'a> {
    /// `Q'(s', π(s'))`
    Policy(&'a Network),
    /// Mean of `Q'(s', a')` over the dataset actions recorded at `s'`;
    /// falls back to the policy where none are recorded.
    Empirical {
        index: &'a SupportIndex,
        ds: &'a OfflineDataset,
        fallback: &'a Network,
    },
}

/// Where the conservative penalty evaluates the critic off the data.
#[derive(Debug)]
pub enum ProposalSource<'a> {
    Policy(&'a Network),
    /// Uniform samples inside the action bounds.
    Uniform {
        low: &'a [f64],
        high: &'a [f64],
    },
}

impl ProposalSource<'_> {
    fn is_categorical(&self) -> bool {
        matches!(self, ProposalSource::Policy(p) if p.head().is_categorical())
    }

    fn actions(&self, states: &Tensor, rng: &mut impl Rng) -> Result<Tensor, PplError> {
        match self {
            ProposalSource::Policy(p) => Ok(p.policy_forward(states)?),
            ProposalSource::Uniform { low, high } => {
                let n = states.rows();
                let d = low.len();
                let mut v = Vec::with_capacity(n * d);
                for _ in 0..n {
                    for k in 0..d {
                        v.push(if high[k] > low[k] {
                            rng.random_range(low[k]..high[k])
                        } else {
                            low[k]
                        });
                    }
                }
                Ok(Tensor::new(vec![n, d], v)?)
            }
        }
    }
}

/// Every `(state, one-hot action)` pair of a batch, rows ordered state-major.
pub fn expand_actions(states: &Tensor, n_actions: usize) -> (Tensor, Tensor) {
    let n = states.rows();
    let mut s = Vec::with_capacity(n * n_actions * states.cols());
    let mut a = vec![0.0; n * n_actions * n_actions];
    for r in 0..n {
        for k in 0..n_actions {
            s.extend_from_slice(states.row(r));
            a[(r * n_actions + k) * n_actions + k] = 1.0;
        }
    }
    (
        Tensor::new(vec![n * n_actions, states.cols()], s).expect("expanded states"),
        Tensor::new(vec![n * n_actions, n_actions], a).expect("expanded actions"),
    )
}

/// Scalar-headed `net` evaluated at every one-hot action: `[n, n_actions]`.
pub fn values_at_all_actions(
    net: &Network,
    states: &Tensor,
    n_actions: usize,
) -> Result<Tensor, PplError> {
    let (s, a) = expand_actions(states, n_actions);
    let v = net.predict(&concat_rows(&s, &a)?)?;
    Ok(Tensor::new(vec![states.rows(), n_actions], v.into_data())?)
}

/// `Σ_a p(a|s) v(s, a)` per row.
fn expectation(probs: &Tensor, values: &Tensor) -> Vec<f64> {
    probs
        .data()
        .chunks(probs.cols())
        .zip(values.data().chunks(values.cols()))
        .map(|(p, v)| p.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

/// Mean over rows of `Σ_a w(s, a) · net(s, a)`, differentiable in `net`'s
/// parameters; `weights` is a constant `[n, n_actions]` matrix.
fn weighted_mean_over_actions(
    g: &mut Graph,
    net: &Network,
    params: &crate::nets::ParamVars,
    states: &Tensor,
    weights: &Tensor,
) -> Result<Var, PplError> {
    let k = weights.cols();
    let (s, a) = expand_actions(states, k);
    let sa = g.constant(concat_rows(&s, &a)?)?;
    let v = net.apply(g, params, sa)?;
    let w = g.constant(Tensor::new(
        vec![weights.len(), 1],
        weights.data().to_vec(),
    )?)?;
    let wv = g.mul(v, w)?;
    let m = g.mean(wv)?;
    Ok(g.scale(m, k as f64)?)
}

fn column(v: Vec<f64>) -> Tensor {
    let n = v.len();
    Tensor::new(vec![n, 1], v).expect("column shape")
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).item().expect("scalar node")
}

/// `r + γ^duration (1 − done) V(s')` for every row of the batch.
pub fn bellman_targets(
    target: &Network,
    bootstrap: BootstrapSource<'_>,
    batch: &Batch,
    gamma: f64,
) -> Result<Vec<f64>, PplError> {
    let n = batch.len();
    let sd = batch.next_states.cols();
    let mut value = vec![0.0; n];
    match bootstrap {
        BootstrapSource::Policy(p) if p.head().is_categorical() => {
            let probs = p.policy_forward(&batch.next_states)?;
            let q = values_at_all_actions(target, &batch.next_states, probs.cols())?;
            value.copy_from_slice(&expectation(&probs, &q));
        }
        BootstrapSource::Policy(p) => {
            let a = p.policy_forward(&batch.next_states)?;
            let q = target.critic_forward(&batch.next_states, &a)?;
            value.copy_from_slice(q.data());
        }
        BootstrapSource::Empirical {
            index,
            ds,
            fallback,
        } => {
            let mut rows_s = Vec::new();
            let mut rows_a = Vec::new();
            let mut owner = Vec::new();
            let mut missing = Vec::new();
            for (r, &i) in batch.indices.iter().enumerate() {
                if batch.done[r] {
                    continue;
                }
                let nb = index.neighbors(i);
                if nb.is_empty() {
                    missing.push(r);
                }
                for &j in nb {
                    rows_s.extend_from_slice(batch.next_states.row(r));
                    rows_a.extend_from_slice(&ds.transitions()[j].action);
                    owner.push(r);
                }
            }
            if !owner.is_empty() {
                let m = owner.len();
                let s = Tensor::new(vec![m, sd], rows_s)?;
                let a = Tensor::new(vec![m, ds.action_dim()], rows_a)?;
                let q = target.critic_forward(&s, &a)?;
                let mut count = vec![0usize; n];
                for (k, &r) in owner.iter().enumerate() {
                    value[r] += q.data()[k];
                    count[r] += 1;
                }
                for r in 0..n {
                    if count[r] > 0 {
                        value[r] /= count[r] as f64;
                    }
                }
            }
            if !missing.is_empty() {
                let s = Tensor::from_rows(
                    &missing
                        .iter()
                        .map(|&r| batch.next_states.row(r))
                        .collect::<Vec<_>>(),
                )?;
                let a = fallback.policy_forward(&s)?;
                let q = if fallback.head().is_categorical() {
                    expectation(&a, &values_at_all_actions(target, &s, a.cols())?)
                } else {
                    target.critic_forward(&s, &a)?.into_data()
                };
                for (k, &r) in missing.iter().enumerate() {
                    value[r] = q[k];
                }
            }
        }
    }
    Ok((0..n)
        .map(|r| {
            let cont = if batch.done[r] {
                0.0
            } else {
                gamma.powf(batch.durations[r]) * value[r]
            };
            batch.rewards[r] + cont
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStep {
    pub bellman_loss: f64,
    pub penalty: f64,
}

/// `coef · (mean Q(s, proposal) − mean Q(s, a_data))` evaluated without gradients.
pub fn conservative_penalty(
    q: &Network,
    states: &Tensor,
    proposals: &Tensor,
    data_actions: &Tensor,
    coef: f64,
) -> Result<f64, PplError> {
    let qp = q.critic_forward(states, proposals)?;
    let qd = q.critic_forward(states, data_actions)?;
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
    Ok(coef * (mean(&qp) - mean(&qd)))
}

/// One step on `mean (y − Q(s,a))² + coef·(mean Q(s, proposal) − mean Q(s, a))`,
/// with `y` computed from the frozen target network, followed by the Polyak
/// update `target ← (1−τ) target + τ Q`.
#[allow(clippy::too_many_arguments)]
pub fn critic_bellman_update(
    critic: &mut Trainee,
    target: &mut Network,
    bootstrap: BootstrapSource<'_>,
    batch: &Batch,
    gamma: f64,
    tau: f64,
    conservative_coef: f64,
    proposals: &ProposalSource<'_>,
    rng: &mut impl Rng,
) -> Result<CriticStep, PplError> {
    let y = bellman_targets(target, bootstrap, batch, gamma)?;
    let mut g = Graph::new();
    let sa = g.constant(concat_rows(&batch.states, &batch.actions)?)?;
    let yv = g.constant(column(y))?;
    let params = critic.net.bind(&mut g, true)?;
    let qd = critic.net.apply(&mut g, &params, sa)?;
    let diff = g.sub(qd, yv)?;
    let sq = g.square(diff)?;
    let bellman = g.mean(sq)?;
    let mut loss = bellman;
    let mut penalty = 0.0;
    if conservative_coef > 0.0 {
        let prop = proposals.actions(&batch.states, rng)?;
        let mp = if proposals.is_categorical() {
            weighted_mean_over_actions(&mut g, &critic.net, &params, &batch.states, &prop)?
        } else {
            let sp = g.constant(concat_rows(&batch.states, &prop)?)?;
            let qp = critic.net.apply(&mut g, &params, sp)?;
            g.mean(qp)?
        };
        let md = g.mean(qd)?;
        let gap = g.sub(mp, md)?;
        let pen = g.scale(gap, conservative_coef)?;
        penalty = scalar(&g, pen);
        loss = g.add(bellman, pen)?;
    }
    let grads = g.backward(loss)?;
    critic.apply_gradient(&params.gradient(&grads))?;
    critic.net.soft_update_into(target, tau);
    Ok(CriticStep {
        bellman_loss: scalar(&g, bellman),
        penalty,
    })
}

/// `L_f = −mean f(s, π(s)) + w · mean f(s, a)`
pub fn potential_objective_values(f_policy: &[f64], f_data: &[f64], w: f64) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    -mean(f_policy) + w * mean(f_data)
}

/// `L_π = mean(−Q(s, π(s)) + f(s, π(s)))`
pub fn policy_objective_values(q_policy: &[f64], f_policy: &[f64]) -> f64 {
    let n = q_policy.len() as f64;
    q_policy
        .iter()
        .zip(f_policy)
        .map(|(q, f)| -q + f)
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialStep {
    pub objective: f64,
    pub f_policy: f64,
    pub f_data: f64,
}

/// One step on `L_f` with the policy's actions held fixed.
pub fn potential_update(
    potential: &mut Trainee,
    policy: &Network,
    batch: &Batch,
    w: f64,
) -> Result<PotentialStep, PplError> {
    let pa = policy.policy_forward(&batch.states)?;
    let mut g = Graph::new();
    let sd = g.constant(concat_rows(&batch.states, &batch.actions)?)?;
    let params = potential.net.bind(&mut g, true)?;
    let mp = if policy.head().is_categorical() {
        weighted_mean_over_actions(&mut g, &potential.net, &params, &batch.states, &pa)?
    } else {
        let sp = g.constant(concat_rows(&batch.states, &pa)?)?;
        let fp = potential.net.apply(&mut g, &params, sp)?;
        g.mean(fp)?
    };
    let fd = potential.net.apply(&mut g, &params, sd)?;
    let md = g.mean(fd)?;
    let wd = g.scale(md, w)?;
    let loss = g.sub(wd, mp)?;
    let grads = g.backward(loss)?;
    potential.apply_gradient(&params.gradient(&grads))?;
    Ok(PotentialStep {
        objective: scalar(&g, loss),
        f_policy: scalar(&g, mp),
        f_data: scalar(&g, md),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyStep {
    pub objective: f64,
    pub q_policy: f64,
    pub f_policy: f64,
}

/// One step on `L_π`; critic and potential parameters are constants.
pub fn policy_update(
    policy: &mut Trainee,
    critic: &Network,
    potential: &Network,
    batch: &Batch,
) -> Result<PolicyStep, PplError> {
    if policy.net.head().is_categorical() {
        return categorical_policy_update(policy, critic, potential, batch);
    }
    let mut g = Graph::new();
    let s = g.constant(batch.states.clone())?;
    let params = policy.net.bind(&mut g, true)?;
    let a = policy.net.apply(&mut g, &params, s)?;
    let sa = g.concat(s, a)?;
    let qparams = critic.bind(&mut g, false)?;
    let q = critic.apply(&mut g, &qparams, sa)?;
    let fparams = potential.bind(&mut g, false)?;
    let f = potential.apply(&mut g, &fparams, sa)?;
    let mq = g.mean(q)?;
    let mf = g.mean(f)?;
    let loss = g.sub(mf, mq)?;
    let grads = g.backward(loss)?;
    policy.apply_gradient(&params.gradient(&grads))?;
    Ok(PolicyStep {
        objective: scalar(&g, loss),
        q_policy: scalar(&g, mq),
        f_policy: scalar(&g, mf),
    })
}

/// `L_π` in expectation over a categorical policy: `mean Σ_a π(a|s) (−Q + f)(s, a)`.
fn categorical_policy_update(
    policy: &mut Trainee,
    critic: &Network,
    potential: &Network,
    batch: &Batch,
) -> Result<PolicyStep, PplError> {
    let k = policy.net.config().output_dim;
    let q = values_at_all_actions(critic, &batch.states, k)?;
    let f = values_at_all_actions(potential, &batch.states, k)?;
    let cost: Vec<f64> = q.data().iter().zip(f.data()).map(|(q, f)| f - q).collect();
    let mut g = Graph::new();
    let s = g.constant(batch.states.clone())?;
    let params = policy.net.bind(&mut g, true)?;
    let p = policy.net.apply(&mut g, &params, s)?;
    let c = g.constant(Tensor::new(vec![batch.len(), k], cost)?)?;
    let pc = g.mul(p, c)?;
    let m = g.mean(pc)?;
    let loss = g.scale(m, k as f64)?;
    let probs = g.value(p).clone();
    let grads = g.backward(loss)?;
    policy.apply_gradient(&params.gradient(&grads))?;
    let n = batch.len() as f64;
    Ok(PolicyStep {
        objective: scalar(&g, loss),
        q_policy: expectation(&probs, &q).iter().sum::<f64>() / n,
        f_policy: expectation(&probs, &f).iter().sum::<f64>() / n,
    })
}

/// One step on `mean(−Q(s, π(s))) + bc_weight · mean ‖π(s) − a‖²`. With no
/// critic this is plain behavior cloning. Returns the loss.
pub fn regression_update(
    policy: &mut Trainee,
    critic: Option<&Network>,
    batch: &Batch,
    bc_weight: f64,
) -> Result<f64, PplError> {
    let mut g = Graph::new();
    let s = g.constant(batch.states.clone())?;
    let target = g.constant(batch.actions.clone())?;
    let params = policy.net.bind(&mut g, true)?;
    let a = policy.net.apply(&mut g, &params, s)?;
    let diff = g.sub(a, target)?;
    let sq = g.square(diff)?;
    let per_coord = g.mean(sq)?;
    let mut loss = g.scale(per_coord, bc_weight * batch.actions.cols() as f64)?;
    match critic {
        Some(q) if policy.net.head().is_categorical() => {
            let k = batch.actions.cols();
            let qa = values_at_all_actions(q, &batch.states, k)?;
            let qc = g.constant(qa)?;
            let pq = g.mul(a, qc)?;
            let m = g.mean(pq)?;
            let mq = g.scale(m, k as f64)?;
            loss = g.sub(loss, mq)?;
        }
        Some(q) => {
            let sa = g.concat(s, a)?;
            let qparams = q.bind(&mut g, false)?;
            let qv = q.apply(&mut g, &qparams, sa)?;
            let mq = g.mean(qv)?;
            loss = g.sub(loss, mq)?;
        }
        None => {}
    }
    let grads = g.backward(loss)?;
    policy.apply_gradient(&params.gradient(&grads))?;
    Ok(scalar(&g, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Transition};
    use crate::nets::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line_dataset(n: usize) -> OfflineDataset {
        let ts = (0..n)
            .map(|i| {
                let s = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                Transition::new(vec![s], vec![0.5 * s], s, vec![s], i % 5 == 4)
            })
            .collect();
        OfflineDataset::new(ts, vec![-1.0], vec![1.0], DatasetMeta::default()).unwrap()
    }

    fn nets() -> (Network, Network, Network) {
        let pi = Network::seeded(NetConfig::policy(1, &[8], &[-1.0], &[1.0]), 1).unwrap();
        let q = Network::seeded(NetConfig::critic(1, 1, &[8]), 2).unwrap();
        let f = Network::seeded(NetConfig::potential(1, 1, &[8]), 3).unwrap();
        (pi, q, f)
    }

    #[test]
    fn uniform_shift_of_f_moves_objectives_by_analytic_amounts() {
        let fp = [0.3, 0.1, 0.7];
        let fd = [0.2, 0.4, 0.0];
        let q = [1.0, -2.0, 0.5];
        for &(w, c) in &[(1.0, 0.25), (8.0, 1.5), (12.0, 1e-3)] {
            let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
            let d_f = potential_objective_values(&shift(&fp), &shift(&fd), w)
                - potential_objective_values(&fp, &fd, w);
            assert!((d_f - c * (w - 1.0)).abs() < 1e-10);
            let d_pi = policy_objective_values(&q, &shift(&fp)) - policy_objective_values(&q, &fp);
            assert!((d_pi - c).abs() < 1e-10);
        }
    }

    #[test]
    fn reported_objectives_match_independent_evaluation() {
        let ds = line_dataset(20);
        let batch = ds.full_batch();
        let (pi, q, f) = nets();
        let pa = pi.policy_forward(&batch.states).unwrap();
        let f_pi = f.potential_forward(&batch.states, &pa).unwrap();
        let f_d = f.potential_forward(&batch.states, &batch.actions).unwrap();
        let q_pi = q.critic_forward(&batch.states, &pa).unwrap();
        let mut ft = Trainee::new(f.clone(), 0.0);
        let ps = potential_update(&mut ft, &pi, &batch, 8.0).unwrap();
        let expect = potential_objective_values(f_pi.data(), f_d.data(), 8.0);
        assert!((ps.objective - expect).abs() < 1e-12);
        let mut pt = Trainee::new(pi.clone(), 0.0);
        let pol = policy_update(&mut pt, &q, &f, &batch).unwrap();
        let expect = policy_objective_values(q_pi.data(), f_pi.data());
        assert!((pol.objective - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_potential_unchanged() {
        let ds = line_dataset(10);
        let (pi, _, f) = nets();
        let mut ft = Trainee::new(f.clone(), 0.0);
        potential_update(&mut ft, &pi, &ds.full_batch(), 8.0).unwrap();
        assert_eq!(ft.net.params(), f.params());
    }

    #[test]
    fn gamma_zero_and_terminal_targets_are_rewards() {
        let ds = line_dataset(10);
        let batch = ds.full_batch();
        let (pi, q, _) = nets();
        let y = bellman_targets(&q, BootstrapSource::Policy(&pi), &batch, 0.0).unwrap();
        assert_eq!(y, batch.rewards);
        let y = bellman_targets(&q, BootstrapSource::Policy(&pi), &batch, 0.9).unwrap();
        for (r, yi) in y.iter().enumerate() {
            if batch.done[r] {
                assert_eq!(*yi, batch.rewards[r]);
            } else {
                assert_ne!(*yi, batch.rewards[r]);
            }
        }
    }

    #[test]
    fn penalty_vanishes_when_proposals_are_the_data() {
        let ds = line_dataset(10);
        let batch = ds.full_batch();
        let (_, q, _) = nets();
        let p =
            conservative_penalty(&q, &batch.states, &batch.actions, &batch.actions, 1.0).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn zero_coefficient_is_plain_bellman() {
        let ds = line_dataset(10);
        let batch = ds.full_batch();
        let (pi, q, _) = nets();
        let run = |proposals: ProposalSource<'_>| {
            let mut c = Trainee::new(q.clone(), 1e-2);
            let mut t = q.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let st = critic_bellman_update(
                &mut c,
                &mut t,
                BootstrapSource::Policy(&pi),
                &batch,
                0.9,
                0.1,
                0.0,
                &proposals,
                &mut rng,
            )
            .unwrap();
            (c.net, st)
        };
        let (a, sa) = run(ProposalSource::Policy(&pi));
        let (b, sb) = run(ProposalSource::Uniform {
            low: &[-1.0],
            high: &[1.0],
        });
        assert_eq!(a.params(), b.params());
        assert_eq!(sa.penalty, 0.0);
        assert_eq!(sa, sb);
    }

    #[test]
    fn zero_potential_gives_plain_policy_gradient() {
        let ds = line_dataset(16);
        let batch = ds.full_batch();
        let (pi, q, _) = nets();
        let mut f0 = Network::seeded(NetConfig::square_potential(1, 1, &[8]), 4).unwrap();
        f0.zero_last_layer();
        let mut with_f = Trainee::new(pi.clone(), 1e-2);
        policy_update(&mut with_f, &q, &f0, &batch).unwrap();
        let mut dpg = Trainee::new(pi.clone(), 1e-2);
        regression_update(&mut dpg, Some(&q), &batch, 0.0).unwrap();
        for (a, b) in with_f.net.params().iter().zip(dpg.net.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_expectations_use_every_action() {
        let (s, a) = expand_actions(&Tensor::new(vec![2, 1], vec![0.5, -0.5]).unwrap(), 3);
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, -0.5, -0.5, -0.5]);
        assert_eq!(a.row(4), &[0.0, 1.0, 0.0]);
        let p = Tensor::new(vec![1, 2], vec![0.25, 0.75]).unwrap();
        let v = Tensor::new(vec![1, 2], vec![4.0, 8.0]).unwrap();
        assert_eq!(expectation(&p, &v), vec![7.0]);
    }
}
