//! Run configuration and the `solve`, `shoot`, `compare` and `plotdata`
//! pipelines with their on-disk artifacts.
//!
//! Every run directory receives `config.json` (the normalized
//! configuration), `trajectory.csv`, `diagnostics.json` and `status.json`.
//! No timestamps are written, so reruns of the same configuration produce
//! identical files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{control_curvature, FullCostate, GameParameters, GameState, SpacecraftGame};
use crate::nlp::{solve, SolverOptions, SolverResult, SolverStatus};
use crate::shooting::{
    reintegrate_collocation, seed_from_collocation, solve_tpbvp, Reintegration, ShootingOptions, ShootingResult,
    ShootingStatus, ShootingUnknowns,
};
use crate::trajectory::Trajectory;
use crate::transcription::{
    initial_guess, CollocationRule, CollocationTrajectory, Mesh, Transcription, VariableBounds, SPACECRAFT_RADII,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit code of a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code when a solver stops without converging.
pub const EXIT_NOT_CONVERGED: i32 = 2;
/// Exit code of I/O, parse and schema errors.
pub const EXIT_ERROR: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leader {
    #[default]
    Evader,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareTolerances {
    /// Bound on `|tf_a - tf_b| / min(tf_a, tf_b)`.
    pub tf_relative: f64,
    /// Bound on the maximum deviation of `r_p, r_e, th_p, th_e`.
    pub position: f64,
}

impl Default for CompareTolerances {
    fn default() -> Self {
        Self {
            tf_relative: 0.08,
            position: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub game: GameParameters,
    pub initial_state: GameState,
    pub leader: Leader,
    /// Number of mesh segments.
    pub mesh: usize,
    pub rule: CollocationRule,
    pub tf_guess: f64,
    pub bounds: VariableBounds,
    pub solver: SolverOptions,
    pub shooting: ShootingOptions,
    pub compare: CompareTolerances,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            game: GameParameters::default(),
            initial_state: GameState::benchmark(),
            leader: Leader::Evader,
            mesh: 40,
            rule: CollocationRule::HermiteSimpson,
            tf_guess: 3.0,
            bounds: VariableBounds::default(),
            solver: SolverOptions::default(),
            shooting: ShootingOptions::default(),
            compare: CompareTolerances::default(),
            output_dir: PathBuf::from("run"),
        }
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => Error::InvalidParameter {
            field: format!("{prefix}.{field}"),
            reason,
        },
        Error::Domain(msg) => Error::param(prefix, msg),
        other => other,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::param(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.game.validate().map_err(|e| prefixed("game", e))?;
        self.initial_state.check().map_err(|e| prefixed("initial_state", e))?;
        if self.mesh < 2 {
            return Err(Error::param("mesh", format!("need at least 2 segments, got {}", self.mesh)));
        }
        if !(self.tf_guess > 0.0 && self.tf_guess.is_finite()) {
            return Err(Error::param("tf_guess", format!("must be finite and > 0, got {}", self.tf_guess)));
        }
        let b = &self.bounds;
        if !(b.tf_min > 0.0 && b.tf_max > b.tf_min) {
            return Err(Error::param("bounds.tf_max", "need 0 < tf_min < tf_max"));
        }
        if !(b.tf_min..=b.tf_max).contains(&self.tf_guess) {
            return Err(Error::param("tf_guess", format!("must lie in [{}, {}]", b.tf_min, b.tf_max)));
        }
        for (name, v) in [
            ("bounds.positive_floor", b.positive_floor),
            ("bounds.control_magnitude", b.control_magnitude),
            ("bounds.magnitude", b.magnitude),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        self.solver.validate()?;
        let s = &self.shooting;
        s.integrator.validate().map_err(|e| prefixed("shooting.integrator", e))?;
        for (name, v) in [("shooting.tolerance", s.tolerance), ("shooting.fd_relative_step", s.fd_relative_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("compare.tf_relative", self.compare.tf_relative), ("compare.position", self.compare.position)] {
            if !(v >= 0.0) {
                return Err(Error::param(name, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Schema(format!("field `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn spacecraft_game(&self) -> Result<SpacecraftGame> {
        SpacecraftGame::new(self.game, self.initial_state)
    }
}

/// Reads and validates a configuration file. Missing fields take the
/// benchmark defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Machine-readable outcome written to `status.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub command: String,
    pub converged: bool,
    pub status: String,
    pub exit_code: i32,
    pub message: String,
}

impl RunStatus {
    fn new(command: &str, converged: bool, status: impl Serialize, message: &str) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            converged,
            status: serde_json::to_value(status)?.as_str().unwrap_or_default().to_string(),
            exit_code: if converged { EXIT_OK } else { EXIT_NOT_CONVERGED },
            message: message.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub mesh: usize,
    pub rule: CollocationRule,
    pub n_variables: usize,
    pub n_constraints: usize,
    pub status: SolverStatus,
    pub terminal_time: f64,
    pub objective: f64,
    pub constraint_norm: f64,
    pub stationarity_norm: f64,
    pub iterations: usize,
    pub restoration_iterations: usize,
    pub function_evaluations: usize,
    pub message: String,
    /// `H` at the final node; the transversality condition makes it zero.
    pub terminal_hamiltonian: f64,
    /// Smallest second-order value of the pursuer's law over non-singular nodes.
    pub min_follower_curvature: f64,
    /// Re-propagation with the interpolated controls, when it succeeds.
    pub reintegration: Option<Reintegration>,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub result: SolverResult,
    pub collocation: CollocationTrajectory,
    pub trajectory: Trajectory,
    pub diagnostics: SolveDiagnostics,
    pub status: RunStatus,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Transcribes and solves the game, then writes the run directory.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    let game = cfg.spacecraft_game()?;
    let t = Transcription::new(game.clone(), Mesh::uniform(cfg.mesh)?, cfg.rule, cfg.bounds, &SPACECRAFT_RADII)?;
    let z0 = initial_guess(&t, cfg.tf_guess)?;
    let result = solve(&t, &z0, &cfg.solver)?;
    let collocation = t.extract_trajectory(&result.x)?;
    let trajectory = Trajectory::from_collocation(&collocation)?;
    let min_curvature = collocation
        .follower_curvature
        .iter()
        .zip(&collocation.follower_singular)
        .filter(|(_, s)| !**s)
        .fold(f64::INFINITY, |a, (c, _)| a.min(*c));
    let diagnostics = SolveDiagnostics {
        mesh: cfg.mesh,
        rule: cfg.rule,
        n_variables: t.layout().n_vars(),
        n_constraints: t.layout().n_cons(),
        status: result.status,
        terminal_time: collocation.terminal_time,
        objective: result.objective,
        constraint_norm: result.constraint_norm,
        stationarity_norm: result.stationarity_norm,
        iterations: result.iterations,
        restoration_iterations: result.restoration_iterations,
        function_evaluations: result.function_evaluations,
        message: result.message.clone(),
        terminal_hamiltonian: collocation.hamiltonian.last().copied().unwrap_or(f64::NAN),
        min_follower_curvature: min_curvature,
        reintegration: reintegrate_collocation(&collocation, &game, &cfg.shooting.integrator.method).ok(),
    };
    let status = RunStatus::new("solve", result.status == SolverStatus::Converged, result.status, &result.message)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_json(dir.join("config.json"), cfg)?;
    trajectory.write_csv(dir.join("trajectory.csv"))?;
    write_json(dir.join("diagnostics.json"), &diagnostics)?;
    write_json(dir.join("status.json"), &status)?;
    Ok(SolveOutcome {
        result,
        collocation,
        trajectory,
        diagnostics,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootDiagnostics {
    pub seed: ShootingUnknowns,
    pub unknowns: ShootingUnknowns,
    pub residual: [f64; 9],
    pub residual_norm: f64,
    pub status: ShootingStatus,
    pub iterations: usize,
    pub step_norms: Vec<f64>,
    pub message: String,
    pub terminal_time: f64,
    /// Largest `|H|` over the written samples.
    pub max_abs_hamiltonian: Option<f64>,
    /// Largest change of `lam_thp` and `lam_the` along the trajectory.
    pub angle_costate_drift: Option<f64>,
    /// Smallest second-order value of the pursuer's law over non-singular samples.
    pub min_follower_curvature: Option<f64>,
    /// `|delta_e - delta_p|` (wrapped to `[0, pi]`) at the last non-singular sample.
    pub terminal_control_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ShootOutcome {
    pub result: ShootingResult,
    pub diagnostics: ShootDiagnostics,
    pub status: RunStatus,
}

/// Shooting unknowns read from a trajectory file. Evader costates present
/// in the file are used as they are; otherwise they are rebuilt.
pub fn seed_from_file(path: impl AsRef<Path>, params: &GameParameters) -> Result<ShootingUnknowns> {
    let traj = Trajectory::read_csv(path)?;
    let first = traj.samples[0];
    match (first.pursuer_costate, first.evader_costate) {
        (Some(pursuer), Some(evader)) => Ok(ShootingUnknowns {
            costate: FullCostate { pursuer, evader },
            terminal_time: traj.terminal_time(),
        }),
        _ => seed_from_collocation(&traj, params),
    }
}

/// Wraps an angle difference to `[0, pi]`.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    ((a - b + PI).rem_euclid(2.0 * PI) - PI).abs()
}

/// Solves the boundary-value problem from a seed trajectory file and writes
/// the dense trajectory with its diagnostics.
pub fn run_shoot(cfg: &RunConfig, seed_path: impl AsRef<Path>) -> Result<ShootOutcome> {
    cfg.validate()?;
    let game = cfg.spacecraft_game()?;
    let seed = seed_from_file(seed_path, &game.params)?;
    let result = solve_tpbvp(&seed, &game, &cfg.shooting)?;
    let sol = result.solution.as_ref();
    let diagnostics = ShootDiagnostics {
        seed,
        unknowns: result.unknowns,
        residual: result.residual,
        residual_norm: result.residual_norm,
        status: result.status,
        iterations: result.iterations,
        step_norms: result.step_norms.clone(),
        message: result.message.clone(),
        terminal_time: result.unknowns.terminal_time,
        max_abs_hamiltonian: sol.map(|s| max_abs(&s.hamiltonian)),
        angle_costate_drift: sol.map(|s| {
            let drift = |pick: fn(&crate::trajectory::Sample) -> f64| {
                let v0 = pick(&s.trajectory.samples[0]);
                s.trajectory.samples.iter().fold(0.0f64, |a, x| a.max((pick(x) - v0).abs()))
            };
            drift(|x| x.pursuer_costate.map_or(0.0, |l| l.l_theta))
                .max(drift(|x| x.evader_costate.map_or(0.0, |l| l.l_theta)))
        }),
        min_follower_curvature: sol.map(|s| {
            s.trajectory
                .samples
                .iter()
                .zip(&s.singular)
                .filter(|(_, sing)| !**sing)
                .fold(f64::INFINITY, |a, (x, _)| {
                    let l = x.pursuer_costate.expect("shooting fills costates");
                    a.min(control_curvature(l.l_vr, l.l_vtheta, game.params.thrust_pursuer, x.delta_p.unwrap_or(0.0)))
                })
        }),
        terminal_control_gap: sol.and_then(|s| {
            let k = s.singular.iter().rposition(|sing| !sing)?;
            let x = &s.trajectory.samples[k];
            Some(angle_gap(x.delta_e?, x.delta_p?))
        }),
    };
    let converged = result.status == ShootingStatus::Converged;
    let status = RunStatus::new("shoot", converged, result.status, &result.message)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_json(dir.join("config.json"), cfg)?;
    if let Some(s) = sol {
        s.trajectory.write_csv(dir.join("trajectory.csv"))?;
    }
    write_json(dir.join("diagnostics.json"), &diagnostics)?;
    write_json(dir.join("status.json"), &status)?;
    Ok(ShootOutcome {
        result,
        diagnostics,
        status,
    })
}

/// `|a - b| / min(|a|, |b|)`.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().min(b.abs())
}

/// Number of points of the common comparison grid.
pub const COMPARE_GRID: usize = 200;

/// State columns whose deviations are reported.
pub const COMPARED_COLUMNS: [&str; 8] = ["v_rp", "v_thp", "r_p", "th_p", "v_re", "v_the", "r_e", "th_e"];

/// Columns held to the position tolerance.
pub const POSITION_COLUMNS: [&str; 4] = ["r_p", "r_e", "th_p", "th_e"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub tf_a: f64,
    pub tf_b: f64,
    pub tf_relative_difference: f64,
    /// Maximum absolute difference of each state column on the common grid.
    pub max_deviation: BTreeMap<String, f64>,
    pub tolerances: CompareTolerances,
    pub pass: bool,
}

/// Compares two trajectories on a uniform grid over their common time span.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory, tol: &CompareTolerances) -> Result<CompareReport> {
    let t0 = a.samples[0].t.max(b.samples[0].t);
    let t1 = a.terminal_time().min(b.terminal_time());
    if !(t1 > t0) {
        return Err(Error::Schema(format!("trajectories do not overlap in time ([{t0}, {t1}])")));
    }
    let grid: Vec<f64> = (0..COMPARE_GRID)
        .map(|k| t0 + (t1 - t0) * k as f64 / (COMPARE_GRID - 1) as f64)
        .collect();
    let mut max_deviation = BTreeMap::new();
    for name in COMPARED_COLUMNS {
        let mut dev = 0.0f64;
        for &t in &grid {
            dev = dev.max((a.interpolate(name, t)? - b.interpolate(name, t)?).abs());
        }
        max_deviation.insert(name.to_string(), dev);
    }
    let (tf_a, tf_b) = (a.terminal_time(), b.terminal_time());
    let tf_relative_difference = relative_difference(tf_a, tf_b);
    let pass = tf_relative_difference <= tol.tf_relative
        && POSITION_COLUMNS.iter().all(|c| max_deviation[*c] <= tol.position);
    Ok(CompareReport {
        tf_a,
        tf_b,
        tf_relative_difference,
        max_deviation,
        tolerances: *tol,
        pass,
    })
}

/// Reads both trajectory files, compares them and writes `compare.json`
/// and `status.json` into `out_dir`.
pub fn run_compare(
    a_path: impl AsRef<Path>,
    b_path: impl AsRef<Path>,
    tol: &CompareTolerances,
    out_dir: impl AsRef<Path>,
) -> Result<CompareReport> {
    let a = Trajectory::read_csv(a_path)?;
    let b = Trajectory::read_csv(b_path)?;
    let report = compare_trajectories(&a, &b, tol)?;
    let dir = out_dir.as_ref();
    create_dir(dir)?;
    write_json(dir.join("compare.json"), &report)?;
    let status = RunStatus {
        command: "compare".into(),
        converged: report.pass,
        status: if report.pass { "pass" } else { "fail" }.into(),
        exit_code: if report.pass { EXIT_OK } else { EXIT_NOT_CONVERGED },
        message: format!("relative tf difference {:.4e}", report.tf_relative_difference),
    };
    write_json(dir.join("status.json"), &status)?;
    Ok(report)
}

/// Plot files written by [`emit_plot_data`].
pub const PLOT_FILES: [&str; 5] = [
    "planar_paths.csv",
    "pursuer_costates.csv",
    "pursuer_velocities.csv",
    "evader_velocities.csv",
    "control_angles.csv",
];

/// Writes planar paths, pursuer costates, both players' velocities and the
/// control angles as separate CSV files. Returns the written paths.
pub fn emit_plot_data(traj_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let traj = Trajectory::read_csv(traj_path)?;
    let dir = out_dir.as_ref();
    create_dir(dir)?;
    let t = traj.times();
    let col = |name: &str| traj.column(name);
    let planar = |r: &str, th: &str| -> Result<(Vec<Option<f64>>, Vec<Option<f64>>)> {
        let (r, th) = (col(r)?, col(th)?);
        Ok(r.iter()
            .zip(&th)
            .map(|(r, th)| match (r, th) {
                (Some(r), Some(th)) => (Some(r * th.cos()), Some(r * th.sin())),
                _ => (None, None),
            })
            .unzip())
    };
    let (xp, yp) = planar("r_p", "th_p")?;
    let (xe, ye) = planar("r_e", "th_e")?;
    let tables: [(&str, Vec<(&str, Vec<Option<f64>>)>); 5] = [
        (PLOT_FILES[0], vec![("x_p", xp), ("y_p", yp), ("x_e", xe), ("y_e", ye)]),
        (
            PLOT_FILES[1],
            vec![
                ("lam_vrp", col("lam_vrp")?),
                ("lam_vthp", col("lam_vthp")?),
                ("lam_rp", col("lam_rp")?),
                ("lam_thp", col("lam_thp")?),
            ],
        ),
        (PLOT_FILES[2], vec![("v_rp", col("v_rp")?), ("v_thp", col("v_thp")?)]),
        (PLOT_FILES[3], vec![("v_re", col("v_re")?), ("v_the", col("v_the")?)]),
        (PLOT_FILES[4], vec![("delta_p", col("delta_p")?), ("delta_e", col("delta_e")?)]),
    ];
    let mut written = Vec::new();
    for (file, columns) in tables {
        let path = dir.join(file);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(f);
        let mut header = vec!["t"];
        header.extend(columns.iter().map(|(n, _)| *n));
        w.write_record(&header)?;
        for (k, tk) in t.iter().enumerate() {
            let mut row = vec![format!("{tk:.16e}")];
            row.extend(columns.iter().map(|(_, v)| v[k].map_or_else(String::new, |x| format!("{x:.16e}"))));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_benchmark_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.mesh, 40);
        assert_eq!(cfg.game.thrust_pursuer, 0.05);
        assert_eq!(cfg.game.thrust_evader, 0.0025);
        assert_eq!(cfg.game.mu, 1.0);
        assert_eq!(cfg.initial_state.evader.r, 1.05);
        assert_eq!(cfg.initial_state.evader.theta, 0.4);
        assert_eq!(cfg.initial_state.evader.v_theta, 0.9759);
        assert_eq!(cfg.leader, Leader::Evader);
    }

    #[test]
    fn zero_pursuer_thrust_names_the_field() {
        let err = RunConfig::from_json(r#"{"game": {"thrust_pursuer": 0.0, "thrust_evader": 0.0025, "mu": 1.0}}"#).unwrap_err();
        assert!(err.to_string().contains("game.thrust_pursuer"), "{err}");
    }

    #[test]
    fn parse_errors_carry_the_field_path() {
        let err = RunConfig::from_json(r#"{"solver": {"tol_constraint": "x"}}"#).unwrap_err();
        assert!(err.to_string().contains("solver.tol_constraint"), "{err}");
        let err = RunConfig::from_json(r#"{"mesh_size": 10}"#).unwrap_err();
        assert!(err.to_string().contains("mesh_size"), "{err}");
        let err = RunConfig::from_json(r#"{"leader": "pursuer"}"#).unwrap_err();
        assert!(err.to_string().contains("leader"), "{err}");
        let err = RunConfig::from_json(r#"{"mesh": 1}"#).unwrap_err();
        assert!(err.to_string().contains("mesh"), "{err}");
        let err = RunConfig::from_json(r#"{"schema_version": 2}"#).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
        assert!(RunConfig::from_json("[").is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let cfg = RunConfig::from_json(r#"{"mesh": 12, "rule": "gauss-lobatto-5", "solver": {"fd_step": 1e-7}}"#).unwrap();
        let once = cfg.to_json().unwrap();
        let twice = RunConfig::from_json(&once).unwrap().to_json().unwrap();
        assert_eq!(once, twice);
        assert_eq!(cfg.rule, CollocationRule::GaussLobatto5);
    }

    #[test]
    fn relative_difference_of_reported_values() {
        let d = relative_difference(2.89, 3.01);
        assert!((d - 0.12 / 2.89).abs() < 1e-15);
        assert!((d - 0.041).abs() < 1e-3);
        assert_eq!(relative_difference(3.0, 3.0), 0.0);
    }

    #[test]
    fn angle_gap_wraps() {
        assert!((angle_gap(0.1, -0.1) - 0.2).abs() < 1e-15);
        assert!((angle_gap(3.1, -3.1) - (2.0 * PI - 6.2)).abs() < 1e-12);
        assert!((angle_gap(0.3, 0.3 + 4.0 * PI)).abs() < 1e-12);
    }
}
