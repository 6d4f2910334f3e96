//! Run directories, comparison reports and plot files.

use stackelberg_core::game::{GameState, PlayerCostate};
use stackelberg_core::run::{
    compare_trajectories, emit_plot_data, load_config, run_compare, run_shoot, run_solve, CompareTolerances, RunConfig,
    RunStatus, EXIT_NOT_CONVERGED, PLOT_FILES,
};
use stackelberg_core::trajectory::{Sample, Trajectory};

fn synthetic(shift: f64, n: usize) -> Trajectory {
    let samples = (0..n)
        .map(|k| {
            let t = 3.0 * k as f64 / (n - 1) as f64;
            let mut state = GameState::benchmark();
            state.pursuer.r = 1.0 + 0.1 * t.sin();
            state.pursuer.theta = 0.9 * t;
            state.evader.r = 1.05 + 0.02 * (2.0 * t).cos();
            state.evader.theta = 0.4 + 0.8 * t;
            Sample {
                t: t + shift,
                state,
                pursuer_costate: Some(PlayerCostate::new(t, -t, 1.0, 2.0)),
                evader_costate: None,
                delta_p: Some(-2.0 + 0.3 * t),
                delta_e: Some(-1.5 + 0.2 * t),
            }
        })
        .collect();
    Trajectory::new(samples).unwrap()
}

#[test]
fn compare_with_itself_is_exact() {
    let a = synthetic(0.0, 50);
    let r = compare_trajectories(&a, &a, &CompareTolerances::default()).unwrap();
    assert_eq!(r.tf_relative_difference, 0.0);
    assert!(r.max_deviation.values().all(|d| *d == 0.0));
    assert!(r.pass);
}

#[test]
fn shifted_copy_matches_independent_interpolation() {
    let (a, b) = (synthetic(0.0, 61), synthetic(0.05, 61));
    let r = compare_trajectories(&a, &b, &CompareTolerances::default()).unwrap();
    // independent piecewise-linear evaluation on the same grid
    let lerp = |xs: &[f64], ys: &[f64], t: f64| {
        let i = (0..xs.len() - 1).find(|&i| t <= xs[i + 1]).unwrap_or(xs.len() - 2);
        ys[i] + (ys[i + 1] - ys[i]) * (t - xs[i]) / (xs[i + 1] - xs[i])
    };
    let (ta, tb) = (a.times(), b.times());
    for name in ["r_p", "th_p", "r_e", "th_e"] {
        let ya: Vec<f64> = a.column(name).unwrap().into_iter().map(Option::unwrap).collect();
        let yb: Vec<f64> = b.column(name).unwrap().into_iter().map(Option::unwrap).collect();
        let (t0, t1) = (0.05, 3.0);
        let expected = (0..200)
            .map(|k| t0 + (t1 - t0) * k as f64 / 199.0)
            .fold(0.0f64, |m, t| m.max((lerp(&ta, &ya, t) - lerp(&tb, &yb, t)).abs()));
        assert!((r.max_deviation[name] - expected).abs() < 1e-12, "{name}: {} vs {expected}", r.max_deviation[name]);
        assert!(expected > 0.0);
    }
    assert!((r.tf_relative_difference - 0.05 / 3.0).abs() < 1e-12);
}

#[test]
fn non_overlapping_trajectories_are_rejected() {
    let (a, b) = (synthetic(0.0, 10), synthetic(10.0, 10));
    assert!(compare_trajectories(&a, &b, &CompareTolerances::default()).is_err());
}

#[test]
fn plot_files_follow_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let traj = synthetic(0.0, 37);
    let path = dir.path().join("t.csv");
    traj.write_csv(&path).unwrap();
    let written = emit_plot_data(&path, dir.path().join("plots")).unwrap();
    assert_eq!(written.len(), PLOT_FILES.len());
    let mut rdr = csv::Reader::from_path(&written[0]).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "x_p", "y_p", "x_e", "y_e"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), traj.samples.len());
    for (row, s) in rows.iter().zip(&traj.samples) {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[1] * v[1] + v[2] * v[2] - s.state.pursuer.r.powi(2)).abs() <= 1e-12);
        assert!((v[3] * v[3] + v[4] * v[4] - s.state.evader.r.powi(2)).abs() <= 1e-12);
    }
    for f in &written[1..] {
        let mut rdr = csv::Reader::from_path(f).unwrap();
        assert!(rdr.headers().unwrap().len() >= 2);
        assert_eq!(rdr.records().count(), traj.samples.len());
    }
}

#[test]
fn run_directories_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"mesh": 10}"#).unwrap();
    let mut cfg = load_config(&cfg_path).unwrap();
    let mut run = |name: &str| {
        cfg.output_dir = dir.path().join(name);
        run_solve(&cfg).unwrap()
    };
    let first = run("a");
    assert!(first.status.converged, "{}", first.status.message);
    run("b");
    // config.json differs only in the output directory
    assert!(dir.path().join("b/config.json").exists());
    for f in ["trajectory.csv", "diagnostics.json", "status.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
    let snapshot = load_config(dir.path().join("a/config.json")).unwrap();
    assert_eq!(snapshot.mesh, 10);

    let traj = Trajectory::read_csv(dir.path().join("a/trajectory.csv")).unwrap();
    assert_eq!(traj.samples.len(), 11);
    assert!(traj.samples.iter().all(|s| s.evader_costate.is_none() && s.pursuer_costate.is_some()));

    let shoot_cfg = RunConfig {
        output_dir: dir.path().join("shoot"),
        ..RunConfig::default()
    };
    let shot = run_shoot(&shoot_cfg, dir.path().join("a/trajectory.csv")).unwrap();
    assert!(shot.status.converged, "{}", shot.status.message);
    let dense = Trajectory::read_csv(dir.path().join("shoot/trajectory.csv")).unwrap();
    assert!(dense.samples.iter().all(|s| s.evader_costate.is_some()));

    let report = run_compare(
        dir.path().join("a/trajectory.csv"),
        dir.path().join("shoot/trajectory.csv"),
        &CompareTolerances::default(),
        dir.path().join("cmp"),
    )
    .unwrap();
    assert!(report.pass);
    assert!(dir.path().join("cmp/compare.json").exists());
}

#[test]
fn failed_solve_still_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_json(r#"{"mesh": 6, "solver": {"max_major_iterations": 1}}"#).unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    let out = run_solve(&cfg).unwrap();
    assert!(!out.status.converged);
    assert_eq!(out.status.exit_code, EXIT_NOT_CONVERGED);
    let status: RunStatus = serde_json::from_str(&std::fs::read_to_string(dir.path().join("status.json")).unwrap()).unwrap();
    assert_eq!(status, out.status);
    assert!(dir.path().join("trajectory.csv").exists() && dir.path().join("diagnostics.json").exists());
}
