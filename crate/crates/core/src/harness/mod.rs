//! Experiment plumbing: dataset resolution, per-seed training and evaluation,
//! reports, w-sweeps and SVG plots.

mod config;
mod metrics;
mod plot;

pub use config::{parse_key_values, Algorithm, DatasetSource, ExperimentSpec, TabularGenerator};
pub use metrics::{
    dataset_paths, ema, mean_abs_deviation, mean_std, nearest_support_action, tabular_selection,
    TabularSelection, MASS_THRESHOLD,
};
pub use plot::{render_sweep_curves, render_trajectories};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_tabular_dataset, generate_toy_path_dataset, load_dataset, random_stitching_mdp,
    DataError, OfflineDataset,
};
use crate::envs::{rollout, Env, RolloutResult, TabularEnv, ToyPathEnv};
use crate::nets::{save_checkpoint, NetError, Network};
use crate::oracle::OracleError;
use crate::ppl::{
    policy_config, qbc_baseline, train, train_observed, PplError, TrainConfig, TrainLog,
    TRAINLOG_HEADER,
};

/// Smoothing coefficient of sweep score curves.
pub const CURVE_EMA: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid experiment: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ppl(#[from] PplError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report has no trajectories to plot: {0}")]
    MissingTrajectories(String),
}

pub fn resolve_dataset(source: &DatasetSource) -> Result<OfflineDataset, HarnessError> {
    Ok(match source {
        DatasetSource::Path { path } => load_dataset(path)?,
        DatasetSource::Toy { config, seed } => {
            generate_toy_path_dataset(config, &ToyPathEnv::default(), *seed)?
        }
        DatasetSource::TabularStitching { config, seed } => {
            let (mdp, support) = random_stitching_mdp(
                config.n_states,
                config.n_actions,
                config.gamma,
                config.mdp_seed,
            );
            generate_tabular_dataset(&mdp, &support, config.episodes, config.max_len, *seed)?
        }
    })
}

/// The environment a dataset was recorded in, when it can be reconstructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EvalEnv {
    Toy(ToyPathEnv),
    Tabular(TabularEnv),
}

impl EvalEnv {
    pub fn from_dataset(ds: &OfflineDataset) -> Option<Self> {
        let meta = ds.meta();
        if let Some(tab) = &meta.tabular {
            return Some(EvalEnv::Tabular(TabularEnv::new(tab.mdp.clone())));
        }
        if meta.generator == "toy-path" {
            let mut env = ToyPathEnv::default();
            if let Some(g) = meta.params.get("gamma").and_then(|v| v.as_f64()) {
                env.gamma = g;
            }
            return Some(EvalEnv::Toy(env));
        }
        None
    }

    pub fn gamma(&self) -> f64 {
        match self {
            EvalEnv::Toy(e) => e.gamma(),
            EvalEnv::Tabular(e) => e.gamma(),
        }
    }

    fn max_steps(&self) -> usize {
        match self {
            EvalEnv::Toy(e) => e.max_steps,
            EvalEnv::Tabular(e) => 4 * e.mdp.n_states.max(1) + 50,
        }
    }

    pub fn rollout(&self, policy: &Network) -> Result<RolloutResult, NetError> {
        let mut err = None;
        let mut act = |s: &[f64]| match policy.act(s) {
            Ok(a) => a,
            Err(e) => {
                err.get_or_insert(e);
                vec![0.0; policy.config().output_dim]
            }
        };
        let r = match self {
            EvalEnv::Toy(e) => rollout(e, &mut act, self.max_steps()),
            EvalEnv::Tabular(e) => rollout(e, &mut act, self.max_steps()),
        };
        match err {
            Some(e) => Err(e),
            None => Ok(r),
        }
    }

    /// Deviation from the straight line for toy paths.
    pub fn deviation(&self, r: &RolloutResult) -> Option<f64> {
        match self {
            EvalEnv::Toy(e) => Some(mean_abs_deviation(e, &r.states())),
            EvalEnv::Tabular(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub discounted_return: f64,
    pub undiscounted_return: f64,
    pub steps: usize,
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `policy`, `baseline` or `behavior`.
    pub label: String,
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SeedStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub status: SeedStatus,
    /// Rollouts of the trained policy.
    pub episodes: Vec<EpisodeMetrics>,
    /// Rollouts of the Q+BC baseline trained next to PPL, if any.
    pub baseline_episodes: Vec<EpisodeMetrics>,
    pub trajectories: Vec<Trajectory>,
    /// `(step, discounted return)` during policy improvement.
    pub curve: Vec<(usize, f64)>,
    pub train_secs: f64,
}

impl SeedReport {
    pub fn is_ok(&self) -> bool {
        self.status == SeedStatus::Ok
    }

    pub fn mean_discounted(&self) -> Option<f64> {
        mean_of(self.episodes.iter().map(|e| e.discounted_return))
    }

    pub fn mean_undiscounted(&self) -> Option<f64> {
        mean_of(self.episodes.iter().map(|e| e.undiscounted_return))
    }

    pub fn mean_deviation(&self) -> Option<f64> {
        mean_of(self.episodes.iter().filter_map(|e| e.deviation))
    }

    pub fn baseline_deviation(&self) -> Option<f64> {
        mean_of(self.baseline_episodes.iter().filter_map(|e| e.deviation))
    }

    pub fn trajectory(&self, label: &str) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.label == label)
    }
}

fn mean_of(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    (!v.is_empty()).then(|| mean_std(&v).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| {
            let (mean, std) = mean_std(values);
            Summary { mean, std }
        })
    }
}

/// Aggregates over successful seeds of the per-seed means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_ok: usize,
    pub n_failed: usize,
    pub discounted_return: Option<Summary>,
    pub undiscounted_return: Option<Summary>,
    pub deviation: Option<Summary>,
    pub baseline_deviation: Option<Summary>,
}

impl Aggregate {
    pub fn from_seeds(seeds: &[SeedReport]) -> Self {
        let ok: Vec<&SeedReport> = seeds.iter().filter(|s| s.is_ok()).collect();
        let col = |f: &dyn Fn(&SeedReport) -> Option<f64>| -> Vec<f64> {
            ok.iter().filter_map(|s| f(s)).collect()
        };
        Aggregate {
            n_ok: ok.len(),
            n_failed: seeds.len() - ok.len(),
            discounted_return: Summary::of(&col(&|s| s.mean_discounted())),
            undiscounted_return: Summary::of(&col(&|s| s.mean_undiscounted())),
            deviation: Summary::of(&col(&|s| s.mean_deviation())),
            baseline_deviation: Summary::of(&col(&|s| s.baseline_deviation())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub algorithm: Algorithm,
    /// The experiment file text, verbatim.
    pub config_echo: String,
    pub train: TrainConfig,
    pub env: Option<EvalEnv>,
    /// Visited states of every recorded dataset episode (toy datasets only).
    pub dataset_paths: Vec<Vec<Vec<f64>>>,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    pub fn any_failed(&self) -> bool {
        self.seeds.iter().any(|s| !s.is_ok())
    }

    /// `seed,status,policy,episode,steps,discounted_return,undiscounted_return,deviation`
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(
            "seed,status,policy,episode,steps,discounted_return,undiscounted_return,deviation\n",
        );
        for s in &self.seeds {
            let status = if s.is_ok() { "ok" } else { "failed" };
            if s.episodes.is_empty() && s.baseline_episodes.is_empty() {
                let _ = writeln!(out, "{},{status},,,,,,", s.seed);
            }
            for (label, eps) in [("policy", &s.episodes), ("baseline", &s.baseline_episodes)] {
                for (i, e) in eps.iter().enumerate() {
                    let dev = e.deviation.map(|d| format!("{d:?}")).unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "{},{status},{label},{i},{},{:?},{:?},{dev}",
                        s.seed, e.steps, e.discounted_return, e.undiscounted_return
                    );
                }
            }
        }
        out
    }
}

fn episode(env: &EvalEnv, policy: &Network) -> Result<(EpisodeMetrics, RolloutResult), NetError> {
    let r = env.rollout(policy)?;
    Ok((
        EpisodeMetrics {
            discounted_return: r.discounted_return,
            undiscounted_return: r.undiscounted_return,
            steps: r.steps,
            deviation: env.deviation(&r),
        },
        r,
    ))
}

struct SeedArtifacts {
    report: SeedReport,
    log: TrainLog,
}

fn run_seed(
    spec: &ExperimentSpec,
    ds: &OfflineDataset,
    env: Option<&EvalEnv>,
    seed: u64,
    dir: &Path,
) -> Result<SeedArtifacts, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut cfg = spec.train.clone();
    cfg.seed = seed;
    if !spec.gamma_explicit {
        if let Some(env) = env {
            cfg.gamma = env.gamma();
        }
    }
    match spec.algorithm {
        Algorithm::Ppl => {}
        Algorithm::Bc => {
            cfg.steps_critic = 0;
            cfg.steps_ppl = 0;
        }
        Algorithm::Qbc => cfg.steps_ppl = 0,
    }
    let mut report = SeedReport {
        seed,
        status: SeedStatus::Ok,
        episodes: Vec::new(),
        baseline_episodes: Vec::new(),
        trajectories: Vec::new(),
        curve: Vec::new(),
        train_secs: 0.0,
    };
    let t0 = Instant::now();
    let mut curve = Vec::new();
    let every = spec.eval_every;
    let mut observer = |step: usize, policy: &Network| {
        if let Some(env) = env {
            if every > 0 && (step.is_multiple_of(every) || step + 1 == cfg.steps_ppl) {
                if let Ok(r) = env.rollout(policy) {
                    curve.push((step, r.discounted_return));
                }
            }
        }
    };
    let trained = if every > 0 {
        train_observed(ds, &cfg, &mut observer)
    } else {
        train(ds, &cfg)
    };
    let out = match trained {
        Ok(out) => out,
        Err(failure) => {
            report.status = SeedStatus::Failed {
                error: failure.error.to_string(),
            };
            report.train_secs = t0.elapsed().as_secs_f64();
            std::fs::write(dir.join("trainlog.csv"), failure.log.to_csv())?;
            return Ok(SeedArtifacts {
                report,
                log: failure.log,
            });
        }
    };
    report.curve = curve;
    let qbc_steps = spec.qbc_steps.unwrap_or(spec.train.steps_ppl);
    let need_qbc =
        spec.algorithm == Algorithm::Qbc || (spec.algorithm == Algorithm::Ppl && spec.baseline);
    let qbc = if need_qbc {
        let pcfg = policy_config(ds, &cfg.hidden, cfg.categorical_policy);
        match qbc_baseline(
            ds,
            &out.critic,
            pcfg,
            qbc_steps,
            cfg.lr_policy,
            spec.qbc_bc_weight,
            cfg.batch_size,
            seed.wrapping_add(0x9e37_79b9),
        ) {
            Ok(net) => Some(net),
            Err(e) => {
                report.status = SeedStatus::Failed {
                    error: format!("q+bc baseline: {e}"),
                };
                None
            }
        }
    } else {
        None
    };
    report.train_secs = t0.elapsed().as_secs_f64();

    let (policy, baseline) = match spec.algorithm {
        Algorithm::Qbc => (qbc.clone(), None),
        _ => (Some(out.policy.clone()), qbc.clone()),
    };
    save_checkpoint(&out.critic, &dir.join("critic.ckpt"))?;
    if spec.algorithm != Algorithm::Bc {
        save_checkpoint(&out.potential, &dir.join("potential.ckpt"))?;
    }
    if let Some(b) = &out.behavior {
        save_checkpoint(b, &dir.join("behavior.ckpt"))?;
    }
    if let Some(p) = &policy {
        save_checkpoint(p, &dir.join("policy.ckpt"))?;
    }
    if let Some(b) = &baseline {
        save_checkpoint(b, &dir.join("baseline.ckpt"))?;
    }
    std::fs::write(dir.join("trainlog.csv"), out.log.to_csv())?;

    if let (Some(env), true) = (env, spec.eval_episodes > 0) {
        let toy = matches!(env, EvalEnv::Toy(_));
        let mut record =
            |label: &str, net: &Network, sink: &mut Vec<EpisodeMetrics>| -> Result<(), NetError> {
                for i in 0..spec.eval_episodes {
                    let (m, r) = episode(env, net)?;
                    sink.push(m);
                    if i == 0 && toy {
                        report.trajectories.push(Trajectory {
                            label: label.to_string(),
                            states: r.states(),
                        });
                    }
                }
                Ok(())
            };
        let mut eps = Vec::new();
        let mut base = Vec::new();
        let mut scratch = Vec::new();
        if let Some(p) = &policy {
            record("policy", p, &mut eps)?;
        }
        if let Some(b) = &baseline {
            record("baseline", b, &mut base)?;
        }
        if let Some(b) = &out.behavior {
            if toy {
                // only the path is kept for plotting
                let (_, r) = episode(env, b)?;
                scratch.push(Trajectory {
                    label: "behavior".into(),
                    states: r.states(),
                });
            }
        }
        report.episodes = eps;
        report.baseline_episodes = base;
        report.trajectories.extend(scratch);
    }
    Ok(SeedArtifacts {
        report,
        log: out.log,
    })
}

/// Trains and evaluates every seed of `spec`, writing `report.json`,
/// `metrics.csv`, `trainlog.csv` and per-seed checkpoints under the output
/// directory. A seed whose training fails is marked failed; the others run on.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricsReport, HarnessError> {
    spec.validate()?;
    let ds = resolve_dataset(&spec.dataset)?;
    run_experiment_on(spec, &ds)
}

/// [`run_experiment`] with an already resolved dataset.
pub fn run_experiment_on(
    spec: &ExperimentSpec,
    ds: &OfflineDataset,
) -> Result<MetricsReport, HarnessError> {
    spec.validate()?;
    let t0 = Instant::now();
    let env = EvalEnv::from_dataset(ds);
    std::fs::create_dir_all(&spec.output_dir)?;
    let mut seeds = Vec::new();
    let mut trainlog = format!("seed,{TRAINLOG_HEADER}\n");
    for &seed in &spec.seeds {
        let dir = spec.output_dir.join(format!("seed-{seed}"));
        let art = run_seed(spec, ds, env.as_ref(), seed, &dir)?;
        for line in art.log.to_csv().lines().skip(1) {
            let _ = writeln!(trainlog, "{seed},{line}");
        }
        seeds.push(art.report);
    }
    let dataset_paths = match env {
        Some(EvalEnv::Toy(_)) => dataset_paths(ds),
        _ => Vec::new(),
    };
    let report = MetricsReport {
        name: spec.name.clone(),
        algorithm: spec.algorithm,
        config_echo: spec.source.clone(),
        train: spec.train.clone(),
        env,
        dataset_paths,
        aggregate: Aggregate::from_seeds(&seeds),
        seeds,
        wall_clock_secs: t0.elapsed().as_secs_f64(),
    };
    std::fs::write(
        spec.output_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(spec.output_dir.join("metrics.csv"), report.metrics_csv())?;
    std::fs::write(spec.output_dir.join("trainlog.csv"), trainlog)?;
    if report
        .env
        .as_ref()
        .is_some_and(|e| matches!(e, EvalEnv::Toy(_)))
        && report.seeds.iter().any(|s| !s.trajectories.is_empty())
    {
        std::fs::write(
            spec.output_dir.join("trajectories.svg"),
            render_trajectories(&report)?,
        )?;
    }
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<MetricsReport, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub w: f64,
    pub aggregate: Aggregate,
    /// Seed-averaged `(step, return)` curve and its moving average.
    pub curve: Vec<(usize, f64)>,
    pub curve_ema: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub rows: Vec<SweepRow>,
    /// w with the smallest mean deviation (toy) or the largest mean return.
    pub best_w: Option<f64>,
    pub reports: Vec<MetricsReport>,
}

impl SweepReport {
    pub fn any_failed(&self) -> bool {
        self.reports.iter().any(MetricsReport::any_failed)
    }

    /// `w,n_ok,n_failed,mean_return,std_return,mean_deviation,std_deviation`
    pub fn csv(&self) -> String {
        let mut out =
            String::from("w,n_ok,n_failed,mean_return,std_return,mean_deviation,std_deviation\n");
        let f = |s: Option<Summary>| match s {
            Some(s) => format!("{:?},{:?}", s.mean, s.std),
            None => ",".into(),
        };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:?},{},{},{},{}",
                r.w,
                r.aggregate.n_ok,
                r.aggregate.n_failed,
                f(r.aggregate.discounted_return),
                f(r.aggregate.deviation)
            );
        }
        out
    }
}

fn mean_curve(report: &MetricsReport) -> Vec<(usize, f64)> {
    let ok: Vec<&SeedReport> = report
        .seeds
        .iter()
        .filter(|s| s.is_ok() && !s.curve.is_empty())
        .collect();
    let Some(first) = ok.first() else {
        return Vec::new();
    };
    first
        .curve
        .iter()
        .enumerate()
        .map(|(i, &(step, _))| {
            let vals: Vec<f64> = ok
                .iter()
                .filter_map(|s| s.curve.get(i).map(|c| c.1))
                .collect();
            (step, mean_std(&vals).0)
        })
        .collect()
}

/// One [`run_experiment`] per `w`, each under `<output_dir>/w-<w>`, merged
/// into `sweep.json` and `sweep.csv`.
pub fn w_sweep(base: &ExperimentSpec, ws: &[f64]) -> Result<SweepReport, HarnessError> {
    if ws.is_empty() {
        return Err(HarnessError::Validation(
            "w sweep needs at least one value".into(),
        ));
    }
    if let Some(bad) = ws.iter().find(|w| !(**w >= 1.0 && w.is_finite())) {
        return Err(HarnessError::Validation(format!(
            "w must be >= 1, got {bad}"
        )));
    }
    base.validate()?;
    let ds = resolve_dataset(&base.dataset)?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &w in ws {
        let mut spec = base.clone();
        spec.train.w = w;
        spec.output_dir = base.output_dir.join(format!("w-{w}"));
        let report = run_experiment_on(&spec, &ds)?;
        let curve = mean_curve(&report);
        let curve_ema = ema(&curve.iter().map(|c| c.1).collect::<Vec<_>>(), CURVE_EMA);
        rows.push(SweepRow {
            w,
            aggregate: report.aggregate.clone(),
            curve,
            curve_ema,
        });
        reports.push(report);
    }
    let by_dev = rows
        .iter()
        .filter_map(|r| r.aggregate.deviation.map(|d| (r.w, d.mean)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let by_ret = rows
        .iter()
        .filter_map(|r| r.aggregate.discounted_return.map(|d| (r.w, d.mean)))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    let sweep = SweepReport {
        name: base.name.clone(),
        best_w: by_dev.or(by_ret).map(|x| x.0),
        rows,
        reports,
    };
    std::fs::create_dir_all(&base.output_dir)?;
    std::fs::write(
        base.output_dir.join("sweep.json"),
        serde_json::to_string_pretty(&sweep)?,
    )?;
    std::fs::write(base.output_dir.join("sweep.csv"), sweep.csv())?;
    if sweep.rows.iter().any(|r| !r.curve.is_empty()) {
        std::fs::write(
            base.output_dir.join("sweep_curves.svg"),
            render_sweep_curves(&sweep),
        )?;
    }
    Ok(sweep)
}
