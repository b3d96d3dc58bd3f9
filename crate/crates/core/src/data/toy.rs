use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetMeta, OfflineDataset, Transition};
use crate::envs::ToyPathEnv;

/// Three experts, each good on a different half of the grid:
/// an upper arc then straight, straight then a lower arc, and a full sine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub arc_amplitude: f64,
    pub sine_amplitude: f64,
    /// Column where the first half ends and all experts meet at `y = 0`.
    pub junction: usize,
    /// Standard deviation of Gaussian noise on every recorded heading.
    pub noise_sigma: f64,
    pub episodes_per_expert: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            arc_amplitude: 0.8,
            sine_amplitude: 0.5,
            junction: 24,
            noise_sigma: 0.01,
            episodes_per_expert: 1,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self, env: &ToyPathEnv) -> Result<(), DataError> {
        let last = env.last_column();
        if self.junction == 0 || self.junction >= last {
            return Err(DataError::Config(format!("junction must lie in 1..{last}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::Config(
                "noise sigma must be finite and >= 0".into(),
            ));
        }
        if self.episodes_per_expert == 0 {
            return Err(DataError::Config("episodes per expert must be >= 1".into()));
        }
        if self.arc_amplitude.abs() >= env.y_bound || self.sine_amplitude.abs() >= env.y_bound {
            return Err(DataError::Config(
                "expert amplitudes must stay inside the y-bounds".into(),
            ));
        }
        Ok(())
    }
}

/// Expert heights at each grid column.
pub fn expert_paths(cfg: &ToyConfig, env: &ToyPathEnv) -> [Vec<f64>; 3] {
    let n = env.grid.len();
    let m = cfg.junction;
    let half = |i: usize| -> f64 {
        if i <= m {
            (std::f64::consts::PI * i as f64 / m as f64).sin()
        } else {
            (std::f64::consts::PI * (i - m) as f64 / (n - 1 - m) as f64).sin()
        }
    };
    let first = |i: usize| i <= m;
    let e1 = (0..n)
        .map(|i| {
            if first(i) {
                cfg.arc_amplitude * half(i)
            } else {
                0.0
            }
        })
        .collect();
    let e2 = (0..n)
        .map(|i| {
            if first(i) {
                0.0
            } else {
                -cfg.arc_amplitude * half(i)
            }
        })
        .collect();
    let e3 = (0..n)
        .map(|i| {
            if first(i) {
                cfg.sine_amplitude * half(i)
            } else {
                -cfg.sine_amplitude * half(i)
            }
        })
        .collect();
    [e1, e2, e3]
}

/// Replays every expert with noisy headings through the toy dynamics.
pub fn generate_toy_path_dataset(
    cfg: &ToyConfig,
    env: &ToyPathEnv,
    seed: u64,
) -> Result<OfflineDataset, DataError> {
    cfg.validate(env)?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| DataError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = expert_paths(cfg, env);
    let b = env.heading_bound;
    let mut transitions = Vec::new();
    for path in &paths {
        for _ in 0..cfg.episodes_per_expert {
            let mut pos = env.start();
            for _ in 0..env.max_steps {
                let c = env.column(pos[0]);
                let target = path.get(c + 1).copied().unwrap_or(0.0);
                let heading = (env.heading_to(pos, target) + noise.sample(&mut rng)).clamp(-b, b);
                let (st, next) = env.step_pos(pos, heading);
                transitions.push(Transition {
                    duration: st.duration,
                    ..Transition::new(pos.to_vec(), vec![heading], st.reward, st.next, st.done)
                });
                pos = next;
                if st.done {
                    break;
                }
            }
        }
    }
    let mut params = serde_json::Map::new();
    let cfg_json = serde_json::to_value(cfg).expect("config serializes");
    if let serde_json::Value::Object(m) = cfg_json {
        params.extend(m);
    }
    params.insert("gamma".into(), env.gamma.into());
    let meta = DatasetMeta {
        generator: "toy-path".into(),
        params,
        seed,
        warnings: Vec::new(),
        tabular: None,
    };
    OfflineDataset::new(transitions, vec![-b], vec![b], meta)
}
