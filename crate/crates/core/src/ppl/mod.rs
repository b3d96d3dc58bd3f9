//! Training procedures: behavior cloning, Bellman critic training with an
//! optional conservative penalty, the potential/policy updates of the
//! partial-transport saddle problem, and the Q+BC baseline.

mod log;
mod support;
mod updates;

pub use log::{Phase, TrainLog, TrainRecord, TRAINLOG_HEADER};
pub use support::SupportIndex;
pub use updates::{
    bellman_targets, conservative_penalty, critic_bellman_update, policy_objective_values,
    policy_update, potential_objective_values, potential_update, regression_update,
    BootstrapSource, CriticStep, PolicyStep, PotentialStep, ProposalSource, Trainee,
};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::data::{DataError, OfflineDataset};
use crate::nets::{NetConfig, NetError, Network};

#[derive(Debug, thiserror::Error)]
pub enum PplError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{phase} step {step}: {source}")]
    Step {
        phase: Phase,
        step: usize,
        #[source]
        source: Box<PplError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Clone β, fit `Q^β`, then improve the policy against the frozen critic.
    OneStep,
    /// Per iteration: critic (bootstrapped by the current policy), potential, policy.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bootstrap {
    /// Next action from the cloned behavior network.
    Policy,
    /// Average over the dataset actions recorded at the next state.
    EmpiricalSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    Policy,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialHead {
    Softplus,
    Square,
}

/// All hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub w: f64,
    pub gamma: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub lr_potential: f64,
    pub batch_size: usize,
    pub steps_bc: usize,
    pub steps_critic: usize,
    pub steps_ppl: usize,
    pub mode: Mode,
    pub conservative_coef: f64,
    pub polyak_tau: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub potential_head: PotentialHead,
    pub bootstrap: Bootstrap,
    /// L∞ radius for matching next states to dataset states.
    pub support_radius: f64,
    /// Maximum number of distinct next actions averaged per transition.
    pub support_k: usize,
    pub proposal: Proposal,
    /// Distribution over one-hot actions instead of a deterministic map.
    pub categorical_policy: bool,
    /// Record every `log_every`-th step plus the last step of each phase.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w: 8.0,
            gamma: 0.99,
            lr_policy: 1e-3,
            lr_critic: 1e-3,
            lr_potential: 1e-3,
            batch_size: 256,
            steps_bc: 20_000,
            steps_critic: 50_000,
            steps_ppl: 10_000,
            mode: Mode::OneStep,
            conservative_coef: 1.0,
            polyak_tau: 0.005,
            seed: 0,
            hidden: vec![64, 64],
            potential_head: PotentialHead::Softplus,
            bootstrap: Bootstrap::Policy,
            support_radius: 1e-9,
            support_k: 8,
            proposal: Proposal::Policy,
            categorical_policy: false,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// The shortest-path toy: one hidden layer of 32 units for every network,
    /// Adam 1e-3, 5000 steps per network, w = 8.
    pub fn toy() -> Self {
        Self {
            hidden: vec![32],
            steps_bc: 5000,
            steps_critic: 5000,
            steps_ppl: 5000,
            conservative_coef: 0.01,
            polyak_tau: 0.05,
            bootstrap: Bootstrap::EmpiricalSupport,
            support_radius: 0.01,
            proposal: Proposal::Uniform,
            ..Self::default()
        }
    }

    /// One-hot tabular MDPs: categorical policy, shortened schedule.
    pub fn tabular() -> Self {
        Self {
            gamma: 0.9,
            batch_size: 64,
            hidden: vec![32],
            steps_bc: 1000,
            steps_critic: 3000,
            steps_ppl: 1500,
            conservative_coef: 0.0,
            polyak_tau: 0.05,
            potential_head: PotentialHead::Square,
            bootstrap: Bootstrap::EmpiricalSupport,
            support_radius: 1e-9,
            proposal: Proposal::Uniform,
            categorical_policy: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PplError> {
        let bad = |m: &str| Err(PplError::Config(m.to_string()));
        if !(self.w >= 1.0 && self.w.is_finite()) {
            return bad("w must be a finite value >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        for lr in [self.lr_policy, self.lr_critic, self.lr_potential] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad("learning rates must be finite and >= 0");
            }
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.conservative_coef >= 0.0 && self.conservative_coef.is_finite()) {
            return bad("conservative coefficient must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.polyak_tau) {
            return bad("polyak tau must lie in [0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be nonempty and >= 1");
        }
        if !(self.support_radius >= 0.0) || self.support_k == 0 {
            return bad("support radius must be >= 0 and support k >= 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be >= 1");
        }
        Ok(())
    }

    fn potential_config(&self, ds: &OfflineDataset) -> NetConfig {
        match self.potential_head {
            PotentialHead::Softplus => {
                NetConfig::potential(ds.state_dim(), ds.action_dim(), &self.hidden)
            }
            PotentialHead::Square => {
                NetConfig::square_potential(ds.state_dim(), ds.action_dim(), &self.hidden)
            }
        }
    }
}

pub fn policy_config(ds: &OfflineDataset, hidden: &[usize], categorical: bool) -> NetConfig {
    if categorical {
        NetConfig::categorical_policy(ds.state_dim(), hidden, ds.action_dim())
    } else {
        NetConfig::policy(ds.state_dim(), hidden, ds.action_low(), ds.action_high())
    }
}

pub fn critic_config(ds: &OfflineDataset, hidden: &[usize]) -> NetConfig {
    NetConfig::critic(ds.state_dim(), ds.action_dim(), hidden)
}

fn at(phase: Phase, step: usize) -> impl FnOnce(PplError) -> PplError {
    move |e| PplError::Step {
        phase,
        step,
        source: Box::new(e),
    }
}

fn wants_log(step: usize, total: usize, every: usize) -> bool {
    step.is_multiple_of(every) || step + 1 == total
}

/// Fits `net` to the dataset actions by mean squared error.
pub fn bc_pretrain(
    ds: &OfflineDataset,
    net: Network,
    steps: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut impl rand::Rng,
) -> Result<Network, PplError> {
    let mut t = Trainee::new(net, lr);
    for step in 0..steps {
        let batch = ds.sample_batch(batch_size, rng)?;
        regression_update(&mut t, None, &batch, 1.0).map_err(at(Phase::Bc, step))?;
    }
    Ok(t.net)
}

/// Q+BC: minimises `mean(−Q(s, π(s))) + bc_weight · mean ‖π(s) − a‖²`
/// from a fresh network against a fixed critic.
#[allow(clippy::too_many_arguments)]
pub fn qbc_baseline(
    ds: &OfflineDataset,
    critic: &Network,
    policy: NetConfig,
    steps: usize,
    lr: f64,
    bc_weight: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Network, PplError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(policy, &mut rng)?;
    let mut t = Trainee::new(net, lr);
    for step in 0..steps {
        let batch = ds.sample_batch(batch_size, &mut rng)?;
        regression_update(&mut t, Some(critic), &batch, bc_weight).map_err(at(Phase::Qbc, step))?;
    }
    Ok(t.net)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: Network,
    /// The cloned behavior policy the run started from, if any.
    pub behavior: Option<Network>,
    pub critic: Network,
    pub target_critic: Network,
    pub potential: Network,
    pub log: TrainLog,
}

/// A failed run keeps whatever was logged before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct TrainFailure {
    pub error: PplError,
    pub log: TrainLog,
}

struct Run<'a> {
    ds: &'a OfflineDataset,
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    log: TrainLog,
    support: Option<SupportIndex>,
}

impl Run<'_> {
    fn proposals<'n>(&self, policy: &'n Network) -> ProposalSource<'n>
    where
        Self: 'n,
    {
        match self.cfg.proposal {
            Proposal::Policy => ProposalSource::Policy(policy),
            Proposal::Uniform => ProposalSource::Uniform {
                low: self.ds.action_low(),
                high: self.ds.action_high(),
            },
        }
    }
}

/// Runs the configured training pipeline end to end.
pub fn train(ds: &OfflineDataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainFailure> {
    train_observed(ds, cfg, &mut |_, _| {})
}

/// Like [`train`], calling `observer(step, policy)` after every improvement step.
pub fn train_observed(
    ds: &OfflineDataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(usize, &Network),
) -> Result<TrainOutput, TrainFailure> {
    let mut run = Run {
        ds,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        log: TrainLog::default(),
        support: None,
    };
    match train_inner(&mut run, observer) {
        Ok(out) => Ok(out),
        Err(error) => Err(TrainFailure {
            error,
            log: run.log,
        }),
    }
}

fn train_inner(
    run: &mut Run<'_>,
    observer: &mut dyn FnMut(usize, &Network),
) -> Result<TrainOutput, PplError> {
    let cfg = run.cfg;
    let ds = run.ds;
    cfg.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(run.rng.next_u64());
    let pi0 = Network::new(
        policy_config(ds, &cfg.hidden, cfg.categorical_policy),
        &mut init_rng,
    )?;
    let q0 = Network::new(critic_config(ds, &cfg.hidden), &mut init_rng)?;
    let f0 = Network::new(cfg.potential_config(ds), &mut init_rng)?;
    if cfg.bootstrap == Bootstrap::EmpiricalSupport && cfg.mode == Mode::OneStep {
        run.support = Some(SupportIndex::build(ds, cfg.support_radius, cfg.support_k));
    }

    let behavior = if cfg.steps_bc > 0 {
        let mut t = Trainee::new(pi0.clone(), cfg.lr_policy);
        for step in 0..cfg.steps_bc {
            let batch = ds.sample_batch(cfg.batch_size, &mut run.rng)?;
            let loss = regression_update(&mut t, None, &batch, 1.0).map_err(at(Phase::Bc, step))?;
            if wants_log(step, cfg.steps_bc, cfg.log_every) {
                run.log.push(TrainRecord {
                    step,
                    phase: Phase::Bc,
                    policy_objective: loss,
                    ..TrainRecord::empty()
                });
            }
        }
        Some(t.net)
    } else {
        None
    };
    let start_policy = behavior.clone().unwrap_or(pi0);

    let mut critic = Trainee::new(q0.clone(), cfg.lr_critic);
    let mut target = q0;
    let mut policy = Trainee::new(start_policy.clone(), cfg.lr_policy);
    let mut potential = Trainee::new(f0, cfg.lr_potential);

    // Critic pretraining: bootstrapped by the starting policy (or the
    // empirical behavior distribution) and held fixed afterwards in one-step mode.
    for step in 0..cfg.steps_critic {
        let batch = ds.sample_batch(cfg.batch_size, &mut run.rng)?;
        let bootstrap = match &run.support {
            Some(index) => BootstrapSource::Empirical {
                index,
                ds,
                fallback: &start_policy,
            },
            None => BootstrapSource::Policy(&start_policy),
        };
        let proposals = run.proposals(&start_policy);
        let cs = critic_bellman_update(
            &mut critic,
            &mut target,
            bootstrap,
            &batch,
            cfg.gamma,
            cfg.polyak_tau,
            cfg.conservative_coef,
            &proposals,
            &mut run.rng,
        )
        .map_err(at(Phase::Critic, step))?;
        if wants_log(step, cfg.steps_critic, cfg.log_every) {
            run.log.push(TrainRecord {
                step,
                phase: Phase::Critic,
                critic_loss: cs.bellman_loss + cs.penalty,
                ..TrainRecord::empty()
            });
        }
    }

    for step in 0..cfg.steps_ppl {
        // one batch per iteration, shared by every update in it
        let batch = ds.sample_batch(cfg.batch_size, &mut run.rng)?;
        let phase = match cfg.mode {
            Mode::OneStep => Phase::Ppl,
            Mode::Joint => Phase::Joint,
        };
        let mut critic_loss = 0.0;
        if cfg.mode == Mode::Joint {
            let current = policy.net.clone();
            let proposals = run.proposals(&current);
            let cs = critic_bellman_update(
                &mut critic,
                &mut target,
                BootstrapSource::Policy(&current),
                &batch,
                cfg.gamma,
                cfg.polyak_tau,
                cfg.conservative_coef,
                &proposals,
                &mut run.rng,
            )
            .map_err(at(phase, step))?;
            critic_loss = cs.bellman_loss + cs.penalty;
        }
        let ps = potential_update(&mut potential, &policy.net, &batch, cfg.w)
            .map_err(at(phase, step))?;
        let pol = policy_update(&mut policy, &critic.net, &potential.net, &batch)
            .map_err(at(phase, step))?;
        if wants_log(step, cfg.steps_ppl, cfg.log_every) {
            run.log.push(TrainRecord {
                step,
                phase,
                critic_loss,
                potential_objective: ps.objective,
                policy_objective: pol.objective,
                f_data: ps.f_data,
                f_policy: ps.f_policy,
                q_policy: pol.q_policy,
            });
        }
        observer(step, &policy.net);
    }

    Ok(TrainOutput {
        policy: policy.net,
        behavior,
        critic: critic.net,
        target_critic: target,
        potential: potential.net,
        log: std::mem::take(&mut run.log),
    })
}
