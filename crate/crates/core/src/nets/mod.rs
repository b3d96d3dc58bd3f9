//! MLPs for the three roles of the saddle problem: policy (transport map),
//! critic (transport cost) and nonnegative potential (dual variable).

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Gradients, Graph, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected width {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("{0} head required for this call")]
    WrongHead(&'static str),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// Output head applied after the last affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    /// `mid + half * tanh(z)`, so every coordinate lands in `[low, high]`.
    PolicyTanh {
        low: Vec<f64>,
        high: Vec<f64>,
    },
    /// Probabilities over one-hot actions; the output is the expected action.
    PolicySoftmax,
    Scalar,
    /// softplus output, nonnegative by construction.
    NonnegativeScalar,
    /// squared output, nonnegative by construction.
    NonnegativeSquare,
}

impl Head {
    pub fn is_nonnegative(&self) -> bool {
        matches!(self, Head::NonnegativeScalar | Head::NonnegativeSquare)
    }

    pub fn is_policy(&self) -> bool {
        matches!(self, Head::PolicyTanh { .. } | Head::PolicySoftmax)
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Head::PolicySoftmax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub head: Head,
}

impl NetConfig {
    pub fn policy(state_dim: usize, hidden: &[usize], low: &[f64], high: &[f64]) -> Self {
        Self {
            input_dim: state_dim,
            hidden: hidden.to_vec(),
            output_dim: low.len(),
            head: Head::PolicyTanh {
                low: low.to_vec(),
                high: high.to_vec(),
            },
        }
    }

    /// A distribution over `n_actions` one-hot actions.
    pub fn categorical_policy(state_dim: usize, hidden: &[usize], n_actions: usize) -> Self {
        Self {
            input_dim: state_dim,
            hidden: hidden.to_vec(),
            output_dim: n_actions,
            head: Head::PolicySoftmax,
        }
    }

    pub fn critic(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        Self {
            input_dim: state_dim + action_dim,
            hidden: hidden.to_vec(),
            output_dim: 1,
            head: Head::Scalar,
        }
    }

    pub fn potential(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        Self {
            head: Head::NonnegativeScalar,
            ..Self::critic(state_dim, action_dim, hidden)
        }
    }

    pub fn square_potential(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        Self {
            head: Head::NonnegativeSquare,
            ..Self::critic(state_dim, action_dim, hidden)
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(NetError::InvalidConfig(format!(
                "all dims must be >= 1 (input {}, hidden {:?}, output {})",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        match &self.head {
            Head::PolicyTanh { low, high } => {
                if low.len() != self.output_dim || high.len() != self.output_dim {
                    return Err(NetError::InvalidConfig(
                        "policy bounds must match the output dim".into(),
                    ));
                }
                if low
                    .iter()
                    .zip(high)
                    .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
                {
                    return Err(NetError::InvalidConfig(
                        "policy bounds must be finite with low <= high".into(),
                    ));
                }
            }
            Head::PolicySoftmax => {}
            Head::Scalar | Head::NonnegativeScalar | Head::NonnegativeSquare => {
                if self.output_dim != 1 {
                    return Err(NetError::InvalidConfig(
                        "scalar heads have output dim 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// An MLP with ReLU hidden activations. Parameters live in one flat vector,
/// laid out per layer as the `[fan_in, fan_out]` weight followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetConfig,
    params: Vec<f64>,
}

/// Parameter leaves of one network recorded on a graph.
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    /// Flattens the gradients of these leaves in parameter order.
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        self.0
            .iter()
            .flat_map(|&v| grads.tensor(v).into_data())
            .collect()
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: NetConfig, rng: &mut impl Rng) -> Result<Self, NetError> {
        config.validate()?;
        let mut params = Vec::with_capacity(config.param_count());
        for (fi, fo) in config.layers() {
            let limit = (6.0 / (fi + fo) as f64).sqrt();
            params.extend((0..fi * fo).map(|_| rng.random_range(-limit..=limit)));
            params.extend(std::iter::repeat_n(0.0, fo));
        }
        Ok(Self { config, params })
    }

    pub fn seeded(config: NetConfig, seed: u64) -> Result<Self, NetError> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self, NetError> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(NetError::DimMismatch {
                what: "parameter vector",
                expected: config.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn head(&self) -> &Head {
        &self.config.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the last layer's weights and bias.
    pub fn zero_last_layer(&mut self) {
        let (fi, fo) = *self.config.layers().last().expect("at least one layer");
        let n = self.params.len();
        self.params[n - (fi * fo + fo)..]
            .iter_mut()
            .for_each(|p| *p = 0.0);
    }

    /// `target ← (1 − tau)·target + tau·self`
    pub fn soft_update_into(&self, target: &mut Network, tau: f64) {
        debug_assert_eq!(self.params.len(), target.params.len());
        for (t, s) in target.params.iter_mut().zip(&self.params) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }

    /// Records this network's parameters on `g`, as gradient-tracked leaves
    /// when `trainable` and as constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<ParamVars, NetError> {
        let mut vars = Vec::new();
        let mut off = 0;
        for (fi, fo) in self.config.layers() {
            let w = Tensor::new(vec![fi, fo], self.params[off..off + fi * fo].to_vec())?;
            off += fi * fo;
            let b = Tensor::new(vec![1, fo], self.params[off..off + fo].to_vec())?;
            off += fo;
            if trainable {
                vars.push(g.param(w)?);
                vars.push(g.param(b)?);
            } else {
                vars.push(g.constant(w)?);
                vars.push(g.constant(b)?);
            }
        }
        Ok(ParamVars(vars))
    }

    /// Applies the network to `input` using parameters previously bound on `g`.
    /// Binding once and applying several times shares the gradient leaves.
    pub fn apply(&self, g: &mut Graph, params: &ParamVars, input: Var) -> Result<Var, NetError> {
        let width = g.value(input).cols();
        if width != self.config.input_dim {
            return Err(NetError::DimMismatch {
                what: "network input",
                expected: self.config.input_dim,
                got: width,
            });
        }
        let n_layers = params.0.len() / 2;
        let mut h = input;
        for li in 0..n_layers {
            let z = g.matmul(h, params.0[2 * li])?;
            h = g.add(z, params.0[2 * li + 1])?;
            if li + 1 < n_layers {
                h = g.relu(h)?;
            }
        }
        let out = match &self.config.head {
            Head::Scalar => h,
            Head::NonnegativeScalar => g.softplus(h)?,
            Head::NonnegativeSquare => g.square(h)?,
            Head::PolicySoftmax => g.softmax(h)?,
            Head::PolicyTanh { low, high } => {
                let d = low.len();
                let t = g.tanh(h)?;
                let mut diag = vec![0.0; d * d];
                for i in 0..d {
                    diag[i * d + i] = 0.5 * (high[i] - low[i]);
                }
                let scale = g.constant(Tensor::new(vec![d, d], diag)?)?;
                let mid: Vec<f64> = low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect();
                let mid = g.constant(Tensor::new(vec![1, d], mid)?)?;
                let scaled = g.matmul(t, scale)?;
                g.add(scaled, mid)?
            }
        };
        Ok(out)
    }

    /// `bind` followed by `apply`.
    pub fn forward(
        &self,
        g: &mut Graph,
        input: Var,
        trainable: bool,
    ) -> Result<(Var, Option<ParamVars>), NetError> {
        let params = self.bind(g, trainable)?;
        let out = self.apply(g, &params, input)?;
        Ok((out, trainable.then_some(params)))
    }

    /// Evaluates the network on a batch without tracking gradients.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor, NetError> {
        let mut g = Graph::new();
        let x = g.constant(input.clone())?;
        let (y, _) = self.forward(&mut g, x, false)?;
        Ok(g.value(y).clone())
    }

    /// Policy actions for a batch of states.
    pub fn policy_forward(&self, states: &Tensor) -> Result<Tensor, NetError> {
        if !self.config.head.is_policy() {
            return Err(NetError::WrongHead("policy"));
        }
        self.predict(states)
    }

    /// Critic values, one per row of the `(state, action)` batch.
    pub fn critic_forward(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor, NetError> {
        if self.config.head != Head::Scalar {
            return Err(NetError::WrongHead("scalar"));
        }
        self.predict(&concat_rows(states, actions)?)
    }

    /// Potential values, nonnegative, one per row.
    pub fn potential_forward(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor, NetError> {
        if !self.config.head.is_nonnegative() {
            return Err(NetError::WrongHead("nonnegative"));
        }
        self.predict(&concat_rows(states, actions)?)
    }

    /// Single-input convenience used by rollouts.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>, NetError> {
        let s = Tensor::new(vec![1, state.len()], state.to_vec())?;
        Ok(self.policy_forward(&s)?.into_data())
    }
}

/// Column-wise concatenation of two batches with equal row counts.
pub fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor, NetError> {
    if a.rows() != b.rows() {
        return Err(NetError::DimMismatch {
            what: "batch rows",
            expected: a.rows(),
            got: b.rows(),
        });
    }
    let mut g = Graph::new();
    let av = g.constant(a.clone())?;
    let bv = g.constant(b.clone())?;
    let c = g.concat(av, bv)?;
    Ok(g.value(c).clone())
}
