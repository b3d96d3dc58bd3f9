#![allow(dead_code)]

use ppl_core::autodiff::{Graph, Tensor, Var};
use ppl_core::data::{DatasetMeta, OfflineDataset, Transition};

pub const FD_STEP: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, 1e-6)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Builds the scalar loss of `program` over fresh leaves holding `inputs`,
/// and compares reverse-mode gradients with central differences. Returns the
/// worst relative error over every coordinate of every input.
pub fn gradcheck<F>(inputs: &[Tensor], program: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone()).unwrap()).collect();
        let out = program(&mut g, &vars);
        g.value(out).item().expect("scalar loss")
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let out = program(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.tensor(vars[i]);
        for k in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.data()[k], numeric));
        }
    }
    worst
}

/// A deterministic pseudo-random tensor with entries in `[-scale, scale]`.
pub fn tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// One-dimensional states on `[0, 1]`, constant action `action`, reward from `reward(s)`.
pub fn line_dataset(n: usize, action: f64, reward: impl Fn(f64) -> f64) -> OfflineDataset {
    let ts = (0..n)
        .map(|i| {
            let s = i as f64 / (n - 1) as f64;
            Transition::new(vec![s], vec![action], reward(s), vec![s], true)
        })
        .collect();
    OfflineDataset::new(ts, vec![-1.0], vec![1.0], DatasetMeta::default()).unwrap()
}
