//! Flat `key = value` experiment files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! | key | meaning |
//! |---|---|
//! | `name` | experiment name (default `experiment`) |
//! | `dataset` | path of a JSONL dataset; excludes `generator` |
//! | `generator` | `toy` or `tabular-stitching` |
//! | `dataset_seed` | generator seed (default 0) |
//! | `toy.arc_amplitude`, `toy.sine_amplitude`, `toy.junction`, `toy.noise_sigma`, `toy.episodes_per_expert` | toy generator |
//! | `tabular.n_states`, `tabular.n_actions`, `tabular.gamma`, `tabular.episodes`, `tabular.max_len`, `tabular.mdp_seed` | tabular generator |
//! | `algorithm` | `ppl`, `bc` or `qbc` (default `ppl`) |
//! | `preset` | `default`, `toy` or `tabular`; applied before the training keys |
//! | `w`, `gamma`, `lr_policy`, `lr_critic`, `lr_potential`, `batch_size`, `steps_bc`, `steps_critic`, `steps_ppl`, `conservative_coef`, `polyak_tau`, `support_radius`, `support_k`, `log_every` | training scalars |
//! | `mode` | `one-step` or `joint` |
//! | `hidden` | comma list of hidden widths |
//! | `potential_head` | `softplus` or `square` |
//! | `bootstrap` | `policy` or `empirical-support` |
//! | `proposal` | `policy` or `uniform` |
//! | `categorical_policy` | `true` / `false` |
//! | `qbc_bc_weight`, `qbc_steps` | Q+BC baseline (defaults 1 and `steps_ppl`) |
//! | `baseline` | also train a Q+BC baseline next to PPL (default `true`) |
//! | `eval_episodes` | rollouts per seed (default 1) |
//! | `eval_every` | evaluate during improvement every this many steps; 0 disables (default 0) |
//! | `seeds` | comma list (default `0`) |
//! | `output_dir` | output directory (default `runs/<name>`) |
//!
//! When `gamma` is not given it is taken from the dataset.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::ToyConfig;
use crate::ppl::{Bootstrap, Mode, PotentialHead, Proposal, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ppl,
    Bc,
    Qbc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularGenerator {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub episodes: usize,
    pub max_len: usize,
    pub mdp_seed: u64,
}

impl Default for TabularGenerator {
    fn default() -> Self {
        Self {
            n_states: 8,
            n_actions: 4,
            gamma: 0.9,
            episodes: 200,
            max_len: 50,
            mdp_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    Path { path: PathBuf },
    Toy { config: ToyConfig, seed: u64 },
    TabularStitching { config: TabularGenerator, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSource,
    pub algorithm: Algorithm,
    pub train: TrainConfig,
    /// Whether `gamma` was set explicitly rather than taken from the dataset.
    pub gamma_explicit: bool,
    pub qbc_bc_weight: f64,
    pub qbc_steps: Option<usize>,
    pub baseline: bool,
    pub eval_episodes: usize,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// The configuration text as given, echoed into reports.
    pub source: String,
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Config {
        line,
        reason: format!("cannot parse value {v:?} for {key}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>, HarnessError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(line, key, s))
        .collect()
}

fn parse_enum<T: serde::de::DeserializeOwned>(
    line: usize,
    key: &str,
    v: &str,
) -> Result<T, HarnessError> {
    serde_json::from_value(serde_json::Value::String(v.to_string())).map_err(|_| {
        HarnessError::Config {
            line,
            reason: format!("unknown value {v:?} for {key}"),
        }
    })
}

/// `(line number, key, value)` triples; duplicate keys are rejected.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, HarnessError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(HarnessError::Config {
                line,
                reason: "expected key = value".into(),
            });
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(HarnessError::Config {
                line,
                reason: "empty key".into(),
            });
        }
        if out.iter().any(|(_, kk, _)| *kk == k) {
            return Err(HarnessError::Config {
                line,
                reason: format!("duplicate key {k}"),
            });
        }
        out.push((line, k, v));
    }
    Ok(out)
}

impl ExperimentSpec {
    pub fn from_config_str(text: &str) -> Result<Self, HarnessError> {
        let kvs = parse_key_values(text)?;
        let get = |key: &str| {
            kvs.iter()
                .find(|(_, k, _)| k == key)
                .map(|(l, _, v)| (*l, v.as_str()))
        };

        let mut train = match get("preset") {
            None | Some((_, "default")) => TrainConfig::default(),
            Some((_, "toy")) => TrainConfig::toy(),
            Some((_, "tabular")) => TrainConfig::tabular(),
            Some((line, v)) => {
                return Err(HarnessError::Config {
                    line,
                    reason: format!("unknown preset {v:?}"),
                })
            }
        };
        let mut toy = ToyConfig::default();
        let mut tab = TabularGenerator::default();
        let mut spec = ExperimentSpec {
            name: "experiment".into(),
            dataset: DatasetSource::Toy {
                config: ToyConfig::default(),
                seed: 0,
            },
            algorithm: Algorithm::Ppl,
            train: TrainConfig::default(),
            gamma_explicit: false,
            qbc_bc_weight: 1.0,
            qbc_steps: None,
            baseline: true,
            eval_episodes: 1,
            eval_every: 0,
            seeds: vec![0],
            output_dir: PathBuf::new(),
            source: text.to_string(),
        };
        let mut path: Option<PathBuf> = None;
        let mut generator: Option<(usize, String)> = None;
        let mut dataset_seed = 0u64;
        let mut output_dir: Option<PathBuf> = None;

        for (line, k, v) in &kvs {
            let (line, v) = (*line, v.as_str());
            match k.as_str() {
                "preset" => {}
                "name" => spec.name = v.to_string(),
                "dataset" => path = Some(PathBuf::from(v)),
                "generator" => generator = Some((line, v.to_string())),
                "dataset_seed" => dataset_seed = parse(line, k, v)?,
                "toy.arc_amplitude" => toy.arc_amplitude = parse(line, k, v)?,
                "toy.sine_amplitude" => toy.sine_amplitude = parse(line, k, v)?,
                "toy.junction" => toy.junction = parse(line, k, v)?,
                "toy.noise_sigma" => toy.noise_sigma = parse(line, k, v)?,
                "toy.episodes_per_expert" => toy.episodes_per_expert = parse(line, k, v)?,
                "tabular.n_states" => tab.n_states = parse(line, k, v)?,
                "tabular.n_actions" => tab.n_actions = parse(line, k, v)?,
                "tabular.gamma" => tab.gamma = parse(line, k, v)?,
                "tabular.episodes" => tab.episodes = parse(line, k, v)?,
                "tabular.max_len" => tab.max_len = parse(line, k, v)?,
                "tabular.mdp_seed" => tab.mdp_seed = parse(line, k, v)?,
                "algorithm" => spec.algorithm = parse_enum(line, k, v)?,
                "w" => train.w = parse(line, k, v)?,
                "gamma" => {
                    train.gamma = parse(line, k, v)?;
                    spec.gamma_explicit = true;
                }
                "lr_policy" => train.lr_policy = parse(line, k, v)?,
                "lr_critic" => train.lr_critic = parse(line, k, v)?,
                "lr_potential" => train.lr_potential = parse(line, k, v)?,
                "batch_size" => train.batch_size = parse(line, k, v)?,
                "steps_bc" => train.steps_bc = parse(line, k, v)?,
                "steps_critic" => train.steps_critic = parse(line, k, v)?,
                "steps_ppl" => train.steps_ppl = parse(line, k, v)?,
                "mode" => train.mode = parse_enum::<Mode>(line, k, v)?,
                "conservative_coef" => train.conservative_coef = parse(line, k, v)?,
                "polyak_tau" => train.polyak_tau = parse(line, k, v)?,
                "hidden" => train.hidden = parse_list(line, k, v)?,
                "potential_head" => train.potential_head = parse_enum::<PotentialHead>(line, k, v)?,
                "bootstrap" => train.bootstrap = parse_enum::<Bootstrap>(line, k, v)?,
                "support_radius" => train.support_radius = parse(line, k, v)?,
                "support_k" => train.support_k = parse(line, k, v)?,
                "proposal" => train.proposal = parse_enum::<Proposal>(line, k, v)?,
                "categorical_policy" => train.categorical_policy = parse(line, k, v)?,
                "log_every" => train.log_every = parse(line, k, v)?,
                "qbc_bc_weight" => spec.qbc_bc_weight = parse(line, k, v)?,
                "qbc_steps" => spec.qbc_steps = Some(parse(line, k, v)?),
                "baseline" => spec.baseline = parse(line, k, v)?,
                "eval_episodes" => spec.eval_episodes = parse(line, k, v)?,
                "eval_every" => spec.eval_every = parse(line, k, v)?,
                "seeds" => spec.seeds = parse_list(line, k, v)?,
                "output_dir" => output_dir = Some(PathBuf::from(v)),
                other => {
                    return Err(HarnessError::Config {
                        line,
                        reason: format!("unknown key {other}"),
                    })
                }
            }
        }
        spec.dataset = match (path, generator) {
            (Some(_), Some((line, _))) => {
                return Err(HarnessError::Config {
                    line,
                    reason: "dataset and generator are mutually exclusive".into(),
                })
            }
            (Some(path), None) => DatasetSource::Path { path },
            (None, None) => DatasetSource::Toy {
                config: toy,
                seed: dataset_seed,
            },
            (None, Some((_, g))) if g == "toy" => DatasetSource::Toy {
                config: toy,
                seed: dataset_seed,
            },
            (None, Some((_, g))) if g == "tabular-stitching" => DatasetSource::TabularStitching {
                config: tab,
                seed: dataset_seed,
            },
            (None, Some((line, g))) => {
                return Err(HarnessError::Config {
                    line,
                    reason: format!("unknown generator {g:?}"),
                })
            }
        };
        spec.train = train;
        spec.output_dir = output_dir.unwrap_or_else(|| Path::new("runs").join(&spec.name));
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_config_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Validation(
                "at least one seed is required".into(),
            ));
        }
        if !(self.qbc_bc_weight >= 0.0 && self.qbc_bc_weight.is_finite()) {
            return Err(HarnessError::Validation(
                "qbc_bc_weight must be finite and >= 0".into(),
            ));
        }
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_applies_before_overrides_regardless_of_order() {
        let spec = ExperimentSpec::from_config_str("w = 3\npreset = toy\nseeds = 1, 2\n").unwrap();
        assert_eq!(spec.train.w, 3.0);
        assert_eq!(spec.train.hidden, vec![32]);
        assert_eq!(spec.seeds, vec![1, 2]);
        assert_eq!(spec.output_dir, Path::new("runs/experiment"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentSpec::from_config_str("# comment\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: 3, .. }), "{e}");
        let e = ExperimentSpec::from_config_str("mode = sideways\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: 1, .. }));
        let e = ExperimentSpec::from_config_str("w = 1\nw = 2\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { line: 2, .. }));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentSpec::from_config_str("w = 0.5\n").is_err());
        assert!(ExperimentSpec::from_config_str("seeds = \n").is_err());
        assert!(ExperimentSpec::from_config_str("dataset = a.jsonl\ngenerator = toy\n").is_err());
    }

    #[test]
    fn tabular_generator_keys() {
        let spec = ExperimentSpec::from_config_str(
            "generator = tabular-stitching\ntabular.mdp_seed = 4\npreset = tabular\nalgorithm = qbc\n",
        )
        .unwrap();
        assert_eq!(spec.algorithm, Algorithm::Qbc);
        match spec.dataset {
            DatasetSource::TabularStitching { config, .. } => assert_eq!(config.mdp_seed, 4),
            other => panic!("{other:?}"),
        }
    }
}
