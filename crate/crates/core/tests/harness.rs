use std::path::Path;

use ppl_core::harness::*;

fn quick_toy(dir: &Path, extra: &str) -> ExperimentSpec {
    let text = format!(
        "name = quick\ngenerator = toy\npreset = toy\nsteps_bc = 60\nsteps_critic = 60\nsteps_ppl = 60\n\
         batch_size = 32\nhidden = 8\nlog_every = 20\noutput_dir = {}\n{extra}",
        dir.display()
    );
    ExperimentSpec::from_config_str(&text).unwrap()
}

#[test]
fn zero_eval_episodes_keeps_training_artifacts_only() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&quick_toy(tmp.path(), "eval_episodes = 0\n")).unwrap();
    let s = &report.seeds[0];
    assert!(s.is_ok());
    assert!(s.episodes.is_empty() && s.baseline_episodes.is_empty() && s.trajectories.is_empty());
    assert!(tmp.path().join("seed-0/policy.ckpt").exists());
    assert!(tmp.path().join("trainlog.csv").exists());
    assert!(!tmp.path().join("trajectories.svg").exists());
    assert!(report.aggregate.discounted_return.is_none());
}

#[test]
fn duplicate_seeds_give_identical_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&quick_toy(tmp.path(), "seeds = 3, 3\n")).unwrap();
    let (a, b) = (&report.seeds[0], &report.seeds[1]);
    assert_eq!(a.episodes, b.episodes);
    assert_eq!(a.baseline_episodes, b.baseline_episodes);
    assert_eq!(a.trajectories, b.trajectories);
    let csv = report.metrics_csv();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], rows[2]);
}

#[test]
fn rerunning_overwrites_with_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = quick_toy(tmp.path(), "seeds = 0, 1\n");
    let read = |name: &str| std::fs::read(tmp.path().join(name)).unwrap();
    run_experiment(&spec).unwrap();
    let (m1, t1) = (read("metrics.csv"), read("trainlog.csv"));
    run_experiment(&spec).unwrap();
    assert_eq!(m1, read("metrics.csv"));
    assert_eq!(t1, read("trainlog.csv"));
}

#[test]
fn aggregates_recompute_from_seed_rows() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&quick_toy(tmp.path(), "seeds = 0, 1, 2\n")).unwrap();
    let report = load_report(&tmp.path().join("report.json")).unwrap();
    let returns: Vec<f64> = report
        .seeds
        .iter()
        .map(|s| s.mean_discounted().unwrap())
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let agg = report.aggregate.discounted_return.unwrap();
    assert!((agg.mean - mean).abs() <= 1e-12);
    assert!((agg.std - std).abs() <= 1e-12);
    let devs: Vec<f64> = report
        .seeds
        .iter()
        .map(|s| s.mean_deviation().unwrap())
        .collect();
    let agg = report.aggregate.deviation.unwrap();
    assert!((agg.mean - devs.iter().sum::<f64>() / n).abs() <= 1e-12);
    assert_eq!(report.aggregate.n_ok, 3);
}

#[test]
fn diverging_seeds_are_marked_failed_and_the_run_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = quick_toy(tmp.path(), "seeds = 0, 1\nlr_critic = 1e300\n");
    let report = run_experiment(&spec).unwrap();
    assert!(report.any_failed());
    assert_eq!(report.seeds.len(), 2);
    assert!(report
        .seeds
        .iter()
        .all(|s| matches!(s.status, SeedStatus::Failed { .. })));
    assert_eq!(report.aggregate.n_failed, 2);
    assert!(report.metrics_csv().contains("failed"));
}

#[test]
fn sweep_validation_and_single_value() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = quick_toy(tmp.path(), "");
    assert!(matches!(
        w_sweep(&spec, &[0.5]),
        Err(HarnessError::Validation(_))
    ));
    assert!(w_sweep(&spec, &[]).is_err());
    let sweep = w_sweep(&spec, &[8.0]).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    let direct = run_experiment(&quick_toy(&tmp.path().join("direct"), "")).unwrap();
    assert_eq!(sweep.reports[0].seeds[0].episodes, direct.seeds[0].episodes);
    assert_eq!(sweep.rows[0].aggregate, direct.aggregate);
    assert_eq!(sweep.best_w, Some(8.0));
    assert!(tmp.path().join("sweep.csv").exists());
}

#[test]
fn sweep_rows_and_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = quick_toy(tmp.path(), "eval_every = 20\n");
    let sweep = w_sweep(&spec, &[1.0, 3.0, 8.0, 12.0]).unwrap();
    assert_eq!(sweep.rows.len(), 4);
    assert_eq!(sweep.csv().lines().count(), 5);
    for r in &sweep.rows {
        assert_eq!(
            r.curve.iter().map(|c| c.0).collect::<Vec<_>>(),
            vec![0, 20, 40, 59]
        );
        assert_eq!(
            r.curve_ema,
            ema(&r.curve.iter().map(|c| c.1).collect::<Vec<_>>(), 0.3)
        );
    }
    let svg = std::fs::read_to_string(tmp.path().join("sweep_curves.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="curve""#).count(), 4);
}

#[test]
fn trajectory_svg_elements() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&quick_toy(tmp.path(), "")).unwrap();
    let svg = std::fs::read_to_string(tmp.path().join("trajectories.svg")).unwrap();
    assert_eq!(svg, render_trajectories(&report).unwrap());
    assert_eq!(svg.matches(r#"class="expert""#).count(), 3);
    assert_eq!(
        svg.matches(r#"class="baseline""#).count() + svg.matches(r#"class="ppl""#).count(),
        2
    );
    assert_eq!(svg.matches(r#"class="grid""#).count(), 50);

    let mut empty = report.clone();
    empty.seeds.clear();
    assert!(matches!(
        render_trajectories(&empty),
        Err(HarnessError::MissingTrajectories(_))
    ));
}

#[test]
fn bc_and_qbc_algorithms() {
    let tmp = tempfile::tempdir().unwrap();
    let bc = run_experiment(&quick_toy(&tmp.path().join("bc"), "algorithm = bc\n")).unwrap();
    assert!(bc.seeds[0].baseline_episodes.is_empty());
    assert!(!tmp.path().join("bc/seed-0/potential.ckpt").exists());
    let qbc = run_experiment(&quick_toy(&tmp.path().join("qbc"), "algorithm = qbc\n")).unwrap();
    assert_eq!(qbc.seeds[0].episodes.len(), 1);
}

#[test]
fn tabular_reports_have_no_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "generator = tabular-stitching\npreset = tabular\nsteps_bc = 50\nsteps_critic = 50\nsteps_ppl = 50\noutput_dir = {}\n",
        tmp.path().display()
    );
    let report = run_experiment(&ExperimentSpec::from_config_str(&text).unwrap()).unwrap();
    assert!(report.dataset_paths.is_empty());
    assert!(matches!(report.env, Some(EvalEnv::Tabular(_))));
    assert_eq!(report.train.gamma, 0.9);
    assert!(render_trajectories(&report).is_err());
    assert!(!tmp.path().join("trajectories.svg").exists());
}
