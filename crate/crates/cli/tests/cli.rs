use std::path::Path;
use std::process::Command;

fn stackelberg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stackelberg")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_shoot_compare_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let (solve, shoot) = (dir.path().join("solve"), dir.path().join("shoot"));
    let out = stackelberg(&["solve", "--mesh", "10", "--rule", "hermite-simpson", "--out", path(&solve)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "trajectory.csv", "diagnostics.json", "status.json"] {
        assert!(solve.join(f).exists(), "{f}");
    }
    let snapshot = std::fs::read_to_string(solve.join("config.json")).unwrap();
    assert!(snapshot.contains("\"mesh\": 10"));

    let seed = solve.join("trajectory.csv");
    let out = stackelberg(&["shoot", "--seed", path(&seed), "--out", path(&shoot)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("converged"));

    let cmp = dir.path().join("cmp");
    let out = stackelberg(&["compare", path(&seed), path(&shoot.join("trajectory.csv")), "--out", path(&cmp)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(cmp.join("compare.json").exists());

    let plots = dir.path().join("plots");
    let out = stackelberg(&["plotdata", path(&shoot.join("trajectory.csv")), "--out", path(&plots)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 5);
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"solver": {"max_major_iterations": 1}}"#).unwrap();
    let out = stackelberg(&["solve", "--config", path(&cfg), "--mesh", "5", "--out", path(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("run/status.json").exists());
}

#[test]
fn bad_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"game": {"thrust_pursuer": 0.0, "thrust_evader": 0.0025, "mu": 1.0}}"#).unwrap();
    let out = stackelberg(&["solve", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("game.thrust_pursuer"));

    let out = stackelberg(&["solve", "--config", path(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(3));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = stackelberg(&["plotdata", path(&bad), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3));

    let out = stackelberg(&["solve", "--rule", "simpson"]);
    assert_ne!(out.status.code(), Some(0));
}
