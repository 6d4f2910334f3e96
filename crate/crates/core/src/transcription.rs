//! Direct collocation of the leader's problem.
//!
//! The follower's optimal response enters as constraints: its costate
//! equations are collocated alongside the state equations, its control is
//! eliminated through the analytic optimality law, and its terminal costate
//! and transversality conditions are imposed at the last node. What remains
//! free are the leader's control values and the terminal time, which the
//! NLP then optimizes.
//!
//! Time is normalized, `t = t_f * tau` with `tau` in `[0, 1]`, so the
//! physical derivative is `t_f` times the rate with respect to `tau`.
//!
//! Decision vector layout, `B = n_state + n_costate + n_leader`:
//!
//! | block | entries |
//! |-------|---------|
//! | node `k = 0..=N` | `[state, follower costate, leader control]` at `B*k` |
//! | segment midpoints | leader control, `n_leader` per segment |
//! | segment interiors (Gauss-Lobatto only) | `[state, costate]` at each segment midpoint |
//! | last entry | `t_f` |
//!
//! Constraint layout: initial state, then per-segment defects (state and
//! costate, one block for Hermite-Simpson, two for Gauss-Lobatto), then the
//! game's terminal conditions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameDefinition, SpacecraftGame};
use crate::kepler;
use crate::nlp::{finite_difference_jacobian, NlpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollocationRule {
    /// Compressed Hermite-Simpson: cubic interpolant, Simpson quadrature.
    #[default]
    HermiteSimpson,
    /// Quintic interpolant through node and midpoint values, collocated at
    /// the interior points of the five-point Lobatto rule.
    #[serde(rename = "gauss-lobatto-5")]
    GaussLobatto5,
}

impl std::str::FromStr for CollocationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hermite-simpson" => Ok(Self::HermiteSimpson),
            "gauss-lobatto-5" => Ok(Self::GaussLobatto5),
            other => Err(Error::param(
                "rule",
                format!("unknown collocation rule `{other}` (expected hermite-simpson or gauss-lobatto-5)"),
            )),
        }
    }
}

/// Normalized node times.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    tau: Vec<f64>,
}

impl Mesh {
    pub fn uniform(n_segments: usize) -> Result<Self> {
        Self::from_nodes((0..=n_segments).map(|k| k as f64 / n_segments as f64).collect())
    }

    /// Nodes must start at 0, end at 1, be strictly increasing and span at
    /// least two segments.
    pub fn from_nodes(tau: Vec<f64>) -> Result<Self> {
        if tau.len() < 3 {
            return Err(Error::param("mesh", "need at least two segments"));
        }
        if tau[0] != 0.0 || *tau.last().unwrap() != 1.0 {
            return Err(Error::param("mesh", "nodes must start at 0 and end at 1"));
        }
        if tau.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("mesh", "nodes must be strictly increasing"));
        }
        Ok(Self { tau })
    }

    pub fn n_segments(&self) -> usize {
        self.tau.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.tau
    }

    pub fn step(&self, segment: usize) -> f64 {
        self.tau[segment + 1] - self.tau[segment]
    }

    /// Segment containing `tau` and the local coordinate in `[0, 1]`.
    pub fn locate(&self, tau: f64) -> (usize, f64) {
        let n = self.n_segments();
        let j = match self.tau.binary_search_by(|v| v.partial_cmp(&tau).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        };
        (j, ((tau - self.tau[j]) / self.step(j)).clamp(0.0, 1.0))
    }
}

fn check_dims(context: &'static str, expected: usize, slices: &[&[f64]]) -> Result<()> {
    for s in slices {
        if s.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: s.len(),
                context,
            });
        }
    }
    Ok(())
}

/// Cubic Hermite interpolant at the segment midpoint.
pub fn hermite_simpson_midpoint(x_k: &[f64], x_k1: &[f64], f_k: &[f64], f_k1: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
    check_dims("hermite-simpson midpoint", x_k.len(), &[x_k1, f_k, f_k1, out])?;
    for i in 0..x_k.len() {
        out[i] = 0.5 * (x_k[i] + x_k1[i]) + h / 8.0 * (f_k[i] - f_k1[i]);
    }
    Ok(())
}

/// `x_k1 - x_k - h/6 (f_k + 4 f_c + f_k1)`, where `f_c` is the dynamics at
/// the interpolated midpoint.
pub fn hermite_simpson_defect(
    x_k: &[f64],
    x_k1: &[f64],
    f_k: &[f64],
    f_k1: &[f64],
    f_c: &[f64],
    h: f64,
    out: &mut [f64],
) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::param("h", "segment length must be > 0"));
    }
    check_dims("hermite-simpson defect", x_k.len(), &[x_k1, f_k, f_k1, f_c, out])?;
    for i in 0..x_k.len() {
        out[i] = x_k1[i] - x_k[i] - h / 6.0 * (f_k[i] + 4.0 * f_c[i] + f_k1[i]);
    }
    Ok(())
}

/// Coefficients of the quintic Hermite interpolant through `(x, h f)` at
/// `s = 0, 1/2, 1`, evaluated at the two collocation points
/// `s = 1/2 -+ sqrt(21)/14`. Order within each row: `x_k, x_m, x_k1,
/// f_k, f_m, f_k1` (the `f` columns are multiplied by `h`).
struct Lobatto5 {
    value: [[f64; 6]; 2],
    slope: [[f64; 6]; 2],
}

fn lobatto5() -> Lobatto5 {
    let r = 21f64.sqrt();
    let value_a = [
        33.0 / 98.0 + 39.0 * r / 686.0,
        16.0 / 49.0,
        33.0 / 98.0 - 39.0 * r / 686.0,
        3.0 / 98.0 + 3.0 * r / 686.0,
        -8.0 * r / 343.0,
        -3.0 / 98.0 + 3.0 * r / 686.0,
    ];
    let slope_a = [
        -90.0 / 49.0 - 16.0 * r / 49.0,
        32.0 * r / 49.0,
        90.0 / 49.0 - 16.0 * r / 49.0,
        -9.0 / 98.0 - r / 98.0,
        -32.0 / 49.0,
        -9.0 / 98.0 + r / 98.0,
    ];
    // mirror image s -> 1 - s
    let value_b = [value_a[2], value_a[1], value_a[0], -value_a[5], -value_a[4], -value_a[3]];
    let slope_b = [-slope_a[2], -slope_a[1], -slope_a[0], slope_a[5], slope_a[4], slope_a[3]];
    Lobatto5 {
        value: [value_a, value_b],
        slope: [slope_a, slope_b],
    }
}

/// Local coordinates of the two interior Lobatto collocation points.
pub fn gauss_lobatto5_points() -> [f64; 2] {
    let d = 21f64.sqrt() / 14.0;
    [0.5 - d, 0.5 + d]
}

/// Interpolated states at the two collocation points.
#[allow(clippy::too_many_arguments)]
pub fn gauss_lobatto5_interior(
    x_k: &[f64],
    x_m: &[f64],
    x_k1: &[f64],
    f_k: &[f64],
    f_m: &[f64],
    f_k1: &[f64],
    h: f64,
    out_a: &mut [f64],
    out_b: &mut [f64],
) -> Result<()> {
    check_dims("gauss-lobatto interior", x_k.len(), &[x_m, x_k1, f_k, f_m, f_k1, out_a, out_b])?;
    let c = lobatto5();
    for (p, out) in [out_a, out_b].into_iter().enumerate() {
        let w = &c.value[p];
        for i in 0..x_k.len() {
            out[i] = w[0] * x_k[i] + w[1] * x_m[i] + w[2] * x_k1[i] + h * (w[3] * f_k[i] + w[4] * f_m[i] + w[5] * f_k1[i]);
        }
    }
    Ok(())
}

/// Slope of the quintic interpolant minus `h` times the dynamics at each
/// collocation point; `out` holds the two defect vectors back to back.
#[allow(clippy::too_many_arguments)]
pub fn gauss_lobatto5_defect(
    x_k: &[f64],
    x_m: &[f64],
    x_k1: &[f64],
    f_k: &[f64],
    f_m: &[f64],
    f_k1: &[f64],
    f_a: &[f64],
    f_b: &[f64],
    h: f64,
    out: &mut [f64],
) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::param("h", "segment length must be > 0"));
    }
    let n = x_k.len();
    check_dims("gauss-lobatto defect", n, &[x_m, x_k1, f_k, f_m, f_k1, f_a, f_b])?;
    check_dims("gauss-lobatto defect output", 2 * n, &[out])?;
    let c = lobatto5();
    for (p, f_c) in [f_a, f_b].into_iter().enumerate() {
        let w = &c.slope[p];
        for i in 0..n {
            let slope = w[0] * x_k[i] + w[1] * x_m[i] + w[2] * x_k1[i] + h * (w[3] * f_k[i] + w[4] * f_m[i] + w[5] * f_k1[i]);
            out[p * n + i] = slope - h * f_c[i];
        }
    }
    Ok(())
}

/// Quadratic through values at `s = 0, 1/2, 1`.
fn quadratic(u0: f64, um: f64, u1: f64, s: f64) -> f64 {
    2.0 * (s - 0.5) * (s - 1.0) * u0 - 4.0 * s * (s - 1.0) * um + 2.0 * s * (s - 0.5) * u1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariableBounds {
    pub tf_min: f64,
    pub tf_max: f64,
    /// Floor on state components the game marks as positive (radii).
    pub positive_floor: f64,
    /// Symmetric bound on the leader's control values.
    pub control_magnitude: f64,
    /// Symmetric bound on every other variable.
    pub magnitude: f64,
}

impl Default for VariableBounds {
    fn default() -> Self {
        Self {
            tf_min: 0.5,
            tf_max: 10.0,
            positive_floor: 0.2,
            control_magnitude: 2.0 * std::f64::consts::PI,
            magnitude: 50.0,
        }
    }
}

/// Index arithmetic for the decision and constraint vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_state: usize,
    pub n_costate: usize,
    pub n_leader: usize,
    pub n_terminal: usize,
    pub n_segments: usize,
    pub rule: CollocationRule,
}

impl Layout {
    pub fn block(&self) -> usize {
        self.n_state + self.n_costate + self.n_leader
    }

    /// State plus costate, the collocated part of a node.
    pub fn augmented(&self) -> usize {
        self.n_state + self.n_costate
    }

    pub fn node(&self, k: usize) -> usize {
        k * self.block()
    }

    pub fn costate(&self, k: usize) -> usize {
        self.node(k) + self.n_state
    }

    pub fn leader(&self, k: usize) -> usize {
        self.node(k) + self.augmented()
    }

    pub fn midpoint_leader(&self, j: usize) -> usize {
        (self.n_segments + 1) * self.block() + j * self.n_leader
    }

    /// Offset of a Gauss-Lobatto interior node (state then costate).
    pub fn interior(&self, j: usize) -> usize {
        self.midpoint_leader(self.n_segments) + j * self.augmented()
    }

    pub fn terminal_time(&self) -> usize {
        self.n_vars() - 1
    }

    pub fn n_vars(&self) -> usize {
        let interior = match self.rule {
            CollocationRule::HermiteSimpson => 0,
            CollocationRule::GaussLobatto5 => self.n_segments * self.augmented(),
        };
        (self.n_segments + 1) * self.block() + self.n_segments * self.n_leader + interior + 1
    }

    pub fn defects_per_segment(&self) -> usize {
        match self.rule {
            CollocationRule::HermiteSimpson => self.augmented(),
            CollocationRule::GaussLobatto5 => 2 * self.augmented(),
        }
    }

    pub fn n_cons(&self) -> usize {
        self.n_state + self.n_segments * self.defects_per_segment() + self.n_terminal
    }

    pub fn defect_offset(&self, j: usize) -> usize {
        self.n_state + j * self.defects_per_segment()
    }

    pub fn terminal_offset(&self) -> usize {
        self.defect_offset(self.n_segments)
    }
}

/// The leader's problem as an equality-constrained NLP.
#[derive(Debug, Clone)]
pub struct Transcription<G> {
    game: G,
    mesh: Mesh,
    layout: Layout,
    bounds: VariableBounds,
    positive: Vec<usize>,
    initial: Vec<f64>,
    exact_hessian: bool,
}

/// Positive state components of the spacecraft game (the two radii).
pub const SPACECRAFT_RADII: [usize; 2] = [2, 6];

impl<G: GameDefinition> Transcription<G> {
    /// `positive_states` lists state components bounded below by the
    /// configured floor.
    pub fn new(game: G, mesh: Mesh, rule: CollocationRule, bounds: VariableBounds, positive_states: &[usize]) -> Result<Self> {
        if !(bounds.tf_min > 0.0 && bounds.tf_min < bounds.tf_max) {
            return Err(Error::param("bounds", "need 0 < tf_min < tf_max"));
        }
        let layout = Layout {
            n_state: game.state_dim(),
            n_costate: game.follower_costate_dim(),
            n_leader: game.leader_control_dim(),
            n_terminal: game.terminal_dim(),
            n_segments: mesh.n_segments(),
            rule,
        };
        if let Some(&bad) = positive_states.iter().find(|&&i| i >= layout.n_state) {
            return Err(Error::param("positive_states", format!("index {bad} out of range")));
        }
        let initial = game.initial_state();
        if initial.len() != layout.n_state {
            return Err(Error::Dimension {
                expected: layout.n_state,
                got: initial.len(),
                context: "initial state",
            });
        }
        Ok(Self {
            game,
            mesh,
            layout,
            bounds,
            positive: positive_states.to_vec(),
            initial,
            exact_hessian: false,
        })
    }

    /// Whether the solver gets the finite-difference Lagrangian Hessian or
    /// falls back to quasi-Newton updates.
    pub fn with_exact_hessian(mut self, exact: bool) -> Self {
        self.exact_hessian = exact;
        self
    }

    pub fn game(&self) -> &G {
        &self.game
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn rule(&self) -> CollocationRule {
        self.layout.rule
    }

    /// Derivative of `[state, costate]` with respect to physical time.
    fn augmented_rhs(&self, y: &[f64], leader: &[f64], terminal: bool, out: &mut [f64]) -> Result<()> {
        let ns = self.layout.n_state;
        let mut follower = vec![0.0; self.game.follower_control_dim()];
        if terminal {
            self.game.follower_control_terminal(&y[..ns], &y[ns..], &mut follower)?;
        } else {
            self.game.follower_control(&y[..ns], &y[ns..], &mut follower)?;
        }
        let (fx, fl) = out.split_at_mut(ns);
        self.game.dynamics(&y[..ns], leader, &follower, fx)?;
        self.game.follower_costate_dynamics(&y[..ns], &y[ns..], fl)
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.layout.n_vars() {
            return Err(Error::Dimension {
                expected: self.layout.n_vars(),
                got: z.len(),
                context: "decision vector",
            });
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("decision vector entry {i} is not finite")));
        }
        Ok(())
    }

    /// Node rates with respect to `tau` (already multiplied by `t_f`).
    fn node_rates(&self, z: &[f64]) -> Result<Vec<f64>> {
        let l = &self.layout;
        let na = l.augmented();
        let tf = z[l.terminal_time()];
        let n = l.n_segments;
        let mut rates = vec![0.0; (n + 1) * na];
        for k in 0..=n {
            let y = &z[l.node(k)..l.node(k) + na];
            let u = &z[l.leader(k)..l.leader(k) + l.n_leader];
            let out = &mut rates[k * na..(k + 1) * na];
            self.augmented_rhs(y, u, k == n, out)?;
            out.iter_mut().for_each(|v| *v *= tf);
        }
        Ok(rates)
    }

    /// Residuals of the full necessary-condition system at `z`.
    pub fn assemble_constraints(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(z)?;
        let l = self.layout;
        if out.len() != l.n_cons() {
            return Err(Error::Dimension {
                expected: l.n_cons(),
                got: out.len(),
                context: "constraint vector",
            });
        }
        let ns = l.n_state;
        let na = l.augmented();
        let nl = l.n_leader;
        let tf = z[l.terminal_time()];

        for i in 0..ns {
            out[i] = z[l.node(0) + i] - self.initial[i];
        }

        let rates = self.node_rates(z)?;
        let mut mid = vec![0.0; na];
        let mut f_mid = vec![0.0; na];
        let mut ya = vec![0.0; na];
        let mut yb = vec![0.0; na];
        let mut fa = vec![0.0; na];
        let mut fb = vec![0.0; na];
        let mut ua = vec![0.0; nl];
        let mut ub = vec![0.0; nl];
        for j in 0..l.n_segments {
            let h = self.mesh.step(j);
            let yk = &z[l.node(j)..l.node(j) + na];
            let yk1 = &z[l.node(j + 1)..l.node(j + 1) + na];
            let fk = &rates[j * na..(j + 1) * na];
            let fk1 = &rates[(j + 1) * na..(j + 2) * na];
            let uc = &z[l.midpoint_leader(j)..l.midpoint_leader(j) + nl];
            let d = l.defect_offset(j);
            match l.rule {
                CollocationRule::HermiteSimpson => {
                    hermite_simpson_midpoint(yk, yk1, fk, fk1, h, &mut mid)?;
                    self.augmented_rhs(&mid, uc, false, &mut f_mid)?;
                    f_mid.iter_mut().for_each(|v| *v *= tf);
                    hermite_simpson_defect(yk, yk1, fk, fk1, &f_mid, h, &mut out[d..d + na])?;
                }
                CollocationRule::GaussLobatto5 => {
                    let ym = &z[l.interior(j)..l.interior(j) + na];
                    self.augmented_rhs(ym, uc, false, &mut f_mid)?;
                    f_mid.iter_mut().for_each(|v| *v *= tf);
                    gauss_lobatto5_interior(yk, ym, yk1, fk, &f_mid, fk1, h, &mut ya, &mut yb)?;
                    let [sa, sb] = gauss_lobatto5_points();
                    let uk = &z[l.leader(j)..l.leader(j) + nl];
                    let uk1 = &z[l.leader(j + 1)..l.leader(j + 1) + nl];
                    for i in 0..nl {
                        ua[i] = quadratic(uk[i], uc[i], uk1[i], sa);
                        ub[i] = quadratic(uk[i], uc[i], uk1[i], sb);
                    }
                    self.augmented_rhs(&ya, &ua, false, &mut fa)?;
                    self.augmented_rhs(&yb, &ub, false, &mut fb)?;
                    fa.iter_mut().chain(fb.iter_mut()).for_each(|v| *v *= tf);
                    gauss_lobatto5_defect(yk, ym, yk1, fk, &f_mid, fk1, &fa, &fb, h, &mut out[d..d + 2 * na])?;
                }
            }
        }

        let n = l.n_segments;
        let t0 = l.terminal_offset();
        self.game.terminal_residual(
            &z[l.node(n)..l.node(n) + ns],
            &z[l.costate(n)..l.costate(n) + l.n_costate],
            &mut out[t0..t0 + l.n_terminal],
        )
    }

    /// The leader maximizes the terminal time.
    pub fn objective_value(&self, z: &[f64]) -> f64 {
        -z[self.layout.terminal_time()]
    }

    pub fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let b = &self.bounds;
        let mut lo = vec![-b.magnitude; l.n_vars()];
        let mut hi = vec![b.magnitude; l.n_vars()];
        let mut floored: Vec<usize> = (0..=l.n_segments).map(|k| l.node(k)).collect();
        if l.rule == CollocationRule::GaussLobatto5 {
            floored.extend((0..l.n_segments).map(|j| l.interior(j)));
        }
        for base in floored {
            for &i in &self.positive {
                lo[base + i] = b.positive_floor;
            }
        }
        let leader_slots = (0..=l.n_segments)
            .map(|k| l.leader(k))
            .chain((0..l.n_segments).map(|j| l.midpoint_leader(j)));
        for base in leader_slots {
            for i in base..base + l.n_leader {
                lo[i] = -b.control_magnitude;
                hi[i] = b.control_magnitude;
            }
        }
        lo[l.terminal_time()] = b.tf_min;
        hi[l.terminal_time()] = b.tf_max;
        (lo, hi)
    }

    /// Maps a decision vector to physical time and reconstructs the
    /// follower's control from its costates.
    pub fn extract_trajectory(&self, z: &[f64]) -> Result<CollocationTrajectory> {
        self.check_len(z)?;
        let l = self.layout;
        let (ns, na, nl, nc) = (l.n_state, l.augmented(), l.n_leader, l.n_costate);
        let nf = self.game.follower_control_dim();
        let tf = z[l.terminal_time()];
        let n = l.n_segments;
        let mut residual = vec![0.0; l.n_cons()];
        self.assemble_constraints(z, &mut residual)?;

        let mut traj = CollocationTrajectory {
            tau: self.mesh.nodes().to_vec(),
            times: self.mesh.nodes().iter().map(|t| tf * t).collect(),
            terminal_time: tf,
            ..Default::default()
        };
        for k in 0..=n {
            let x = &z[l.node(k)..l.node(k) + ns];
            let lam = &z[l.costate(k)..l.costate(k) + nc];
            let u = &z[l.leader(k)..l.leader(k) + nl];
            let mut follower = vec![0.0; nf];
            let singular = if k == n {
                // the terminal conditions zero the costates the law needs
                self.game.follower_control_terminal(x, lam, &mut follower)?;
                true
            } else {
                self.game.follower_control(x, lam, &mut follower)?
            };
            traj.hamiltonian.push(self.game.hamiltonian_sample(x, lam, u, &follower, k == n)?);
            traj.follower_curvature.push(self.game.follower_curvature(lam, &follower));
            traj.states.push(x.to_vec());
            traj.costates.push(lam.to_vec());
            traj.leader.push(u.to_vec());
            traj.follower.push(follower);
            traj.follower_singular.push(singular);
        }
        for j in 0..n {
            traj.midpoint_leader.push(z[l.midpoint_leader(j)..l.midpoint_leader(j) + nl].to_vec());
            if l.rule == CollocationRule::GaussLobatto5 {
                traj.interior.push(z[l.interior(j)..l.interior(j) + na].to_vec());
            }
        }
        traj.constraint_norm = residual.iter().fold(0.0, |a, b| a.max(b.abs()));
        Ok(traj)
    }

    /// Inverse of [`Self::extract_trajectory`].
    pub fn decision_from_trajectory(&self, traj: &CollocationTrajectory) -> Result<Vec<f64>> {
        let l = self.layout;
        let n = l.n_segments;
        if traj.states.len() != n + 1 || traj.midpoint_leader.len() != n {
            return Err(Error::Dimension {
                expected: n + 1,
                got: traj.states.len(),
                context: "trajectory nodes",
            });
        }
        let mut z = vec![0.0; l.n_vars()];
        for k in 0..=n {
            z[l.node(k)..l.node(k) + l.n_state].copy_from_slice(&traj.states[k]);
            z[l.costate(k)..l.costate(k) + l.n_costate].copy_from_slice(&traj.costates[k]);
            z[l.leader(k)..l.leader(k) + l.n_leader].copy_from_slice(&traj.leader[k]);
        }
        for j in 0..n {
            z[l.midpoint_leader(j)..l.midpoint_leader(j) + l.n_leader].copy_from_slice(&traj.midpoint_leader[j]);
            if l.rule == CollocationRule::GaussLobatto5 {
                z[l.interior(j)..l.interior(j) + l.augmented()].copy_from_slice(&traj.interior[j]);
            }
        }
        z[l.terminal_time()] = traj.terminal_time;
        Ok(z)
    }

    /// Central-difference Jacobian exploiting that each defect block only
    /// involves its own segment plus `t_f`: columns that never share a
    /// constraint row are perturbed together.
    fn structured_jacobian(&self, z: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let l = self.layout;
        let (m, nv) = (l.n_cons(), l.n_vars());
        let groups = self.column_groups();
        let mut jac = DMatrix::zeros(m, nv);
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        let mut zp = z.to_vec();
        for group in &groups {
            for &c in group {
                zp[c] = z[c] + step;
            }
            self.assemble_constraints(&zp, &mut plus)?;
            for &c in group {
                zp[c] = z[c] - step;
            }
            self.assemble_constraints(&zp, &mut minus)?;
            for &c in group {
                zp[c] = z[c];
                for r in self.rows_of(c) {
                    let v = (plus[r] - minus[r]) / (2.0 * step);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteJacobian { column: c });
                    }
                    jac[(r, c)] = v;
                }
            }
        }
        Ok(jac)
    }

    /// Hessian of `multipliers^T c` by differencing `J^T multipliers`,
    /// reusing the column groups: two columns in a group never share a
    /// neighbour, so each group yields several Hessian columns at once.
    fn structured_hessian(&self, z: &[f64], multipliers: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let l = self.layout;
        let nv = l.n_vars();
        if multipliers.len() != l.n_cons() {
            return Err(Error::Dimension {
                expected: l.n_cons(),
                got: multipliers.len(),
                context: "multipliers",
            });
        }
        let lam = nalgebra::DVector::from_column_slice(multipliers);
        let outer = step.cbrt().powi(2).max(step);
        let grad = |x: &[f64]| -> Result<nalgebra::DVector<f64>> { Ok(self.structured_jacobian(x, step)?.tr_mul(&lam)) };
        let tf = l.terminal_time();
        let mut hess = DMatrix::zeros(nv, nv);
        let mut zp = z.to_vec();
        for group in self.column_groups() {
            for &c in &group {
                zp[c] = z[c] + outer;
            }
            let gp = grad(&zp)?;
            for &c in &group {
                zp[c] = z[c] - outer;
            }
            let gm = grad(&zp)?;
            for &c in &group {
                zp[c] = z[c];
            }
            let whole = group.len() == 1 && group[0] == tf;
            for &c in &group {
                let rows: Vec<usize> = if whole { (0..nv).collect() } else { self.neighbours(c) };
                for r in rows {
                    hess[(r, c)] = (gp[r] - gm[r]) / (2.0 * outer);
                }
            }
        }
        // the t_f column is exact; mirror it and symmetrize the rest
        for r in 0..nv {
            hess[(tf, r)] = hess[(r, tf)];
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        if let Some(i) = sym.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteJacobian { column: i / nv });
        }
        Ok(sym)
    }

    /// Variables sharing a constraint row with column `c`, excluding `t_f`.
    fn neighbours(&self, c: usize) -> Vec<usize> {
        let l = self.layout;
        let n = l.n_segments;
        let segments: Vec<usize> = if c < l.node(n + 1) {
            let k = c / l.block();
            (k.saturating_sub(1)..=k.min(n - 1)).collect()
        } else if c < l.midpoint_leader(n) {
            vec![(c - l.midpoint_leader(0)) / l.n_leader]
        } else {
            vec![(c - l.interior(0)) / l.augmented()]
        };
        let mut out = Vec::new();
        for (i, &j) in segments.iter().enumerate() {
            let first = if i == 0 { j } else { j + 1 };
            for k in first..=j + 1 {
                out.extend(l.node(k)..l.node(k) + l.block());
            }
        }
        for &j in &segments {
            out.extend(l.midpoint_leader(j)..l.midpoint_leader(j) + l.n_leader);
            if l.rule == CollocationRule::GaussLobatto5 {
                out.extend(l.interior(j)..l.interior(j) + l.augmented());
            }
        }
        out
    }

    /// Columns grouped so that no two in a group touch the same row.
    fn column_groups(&self) -> Vec<Vec<usize>> {
        let l = self.layout;
        let n = l.n_segments;
        let b = l.block();
        // nodes three apart share no segment, interiors/midpoints two apart
        let mut groups = Vec::new();
        for phase in 0..3 {
            for off in 0..b {
                groups.push((phase..=n).step_by(3).map(|k| l.node(k) + off).collect());
            }
        }
        for phase in 0..2 {
            for off in 0..l.n_leader {
                groups.push((phase..n).step_by(2).map(|j| l.midpoint_leader(j) + off).collect());
            }
            if l.rule == CollocationRule::GaussLobatto5 {
                for off in 0..l.augmented() {
                    groups.push((phase..n).step_by(2).map(|j| l.interior(j) + off).collect());
                }
            }
        }
        groups.push(vec![l.terminal_time()]);
        groups
    }

    /// Constraint rows a column can influence.
    fn rows_of(&self, c: usize) -> std::ops::Range<usize> {
        let l = self.layout;
        let n = l.n_segments;
        let seg_rows = |j: usize| l.defect_offset(j)..l.defect_offset(j + 1);
        if c == l.terminal_time() {
            return 0..l.n_cons();
        }
        if c < l.node(n + 1) {
            let k = c / l.block();
            let start = if k == 0 { 0 } else { seg_rows(k - 1).start };
            let end = if k == n { l.n_cons() } else { seg_rows(k).end };
            return start..end;
        }
        if c < l.midpoint_leader(n) {
            return seg_rows((c - l.midpoint_leader(0)) / l.n_leader);
        }
        seg_rows((c - l.interior(0)) / l.augmented())
    }
}

impl<G: GameDefinition> NlpProblem for Transcription<G> {
    fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    fn n_cons(&self) -> usize {
        self.layout.n_cons()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective_value(x)
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        if self.assemble_constraints(x, out).is_err() {
            out.fill(f64::NAN);
        }
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.variable_bounds().0
    }

    fn upper_bounds(&self) -> Vec<f64> {
        self.variable_bounds().1
    }

    fn objective_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        g[self.layout.terminal_time()] = -1.0;
        Some(g)
    }

    fn constraint_jacobian(&self, x: &[f64], step: f64) -> Option<Result<DMatrix<f64>>> {
        Some(self.structured_jacobian(x, step))
    }

    fn lagrangian_hessian(&self, x: &[f64], multipliers: &[f64], step: f64) -> Option<Result<DMatrix<f64>>> {
        self.exact_hessian.then(|| self.structured_hessian(x, multipliers, step))
    }
}

/// Dense-FD reference for [`Transcription`]'s structured Jacobian.
pub fn dense_jacobian<G: GameDefinition>(t: &Transcription<G>, z: &[f64], step: f64) -> Result<DMatrix<f64>> {
    finite_difference_jacobian(|x, out| t.constraints(x, out), z, t.n_cons(), step)
}

/// Collocation solution in physical time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollocationTrajectory {
    pub tau: Vec<f64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    pub leader: Vec<Vec<f64>>,
    pub follower: Vec<Vec<f64>>,
    pub follower_singular: Vec<bool>,
    pub midpoint_leader: Vec<Vec<f64>>,
    /// Gauss-Lobatto interior nodes (empty for Hermite-Simpson).
    pub interior: Vec<Vec<f64>>,
    pub terminal_time: f64,
    pub constraint_norm: f64,
    /// Second-order value of the follower's law at each node.
    pub follower_curvature: Vec<f64>,
    pub hamiltonian: Vec<f64>,
}

impl CollocationTrajectory {
    /// Leader control at physical time `t`, quadratic through the node and
    /// midpoint values of the enclosing segment.
    pub fn leader_at(&self, t: f64) -> Vec<f64> {
        let mesh = Mesh { tau: self.tau.clone() };
        let (j, s) = mesh.locate(t / self.terminal_time);
        (0..self.leader[j].len())
            .map(|i| quadratic(self.leader[j][i], self.midpoint_leader[j][i], self.leader[j + 1][i], s))
            .collect()
    }
}

/// Deterministic starting point for the spacecraft game.
///
/// The evader coasts along its Kepler orbit; the pursuer's states are
/// linearly interpolated from its initial state to the evader's coasting
/// state at `tf_guess`, so the guess already satisfies capture. Costates
/// start at `(-0.1, -0.1, -0.1, 0)` and the leader's controls at zero.
pub fn initial_guess(t: &Transcription<SpacecraftGame>, tf_guess: f64) -> Result<Vec<f64>> {
    if !(tf_guess > 0.0) {
        return Err(Error::param("tf_guess", "must be > 0"));
    }
    let game = t.game();
    let l = *t.layout();
    let mu = game.params.mu;
    let p0 = game.initial.pursuer.to_array();
    let e0 = game.initial.evader;
    let meet = kepler::coast(&e0, mu, tf_guess)?.to_array();
    let guess_at = |tau: f64| -> Result<Vec<f64>> {
        let e = kepler::coast(&e0, mu, tau * tf_guess)?.to_array();
        let mut y: Vec<f64> = (0..4).map(|i| p0[i] + tau * (meet[i] - p0[i])).collect();
        y.extend_from_slice(&e);
        y.extend_from_slice(&[-0.1, -0.1, -0.1, 0.0]);
        Ok(y)
    };
    let mut z = vec![0.0; l.n_vars()];
    let tau = t.mesh().nodes();
    for (k, &tk) in tau.iter().enumerate() {
        let y = guess_at(tk)?;
        z[l.node(k)..l.node(k) + l.augmented()].copy_from_slice(&y);
    }
    if l.rule == CollocationRule::GaussLobatto5 {
        for j in 0..l.n_segments {
            let y = guess_at(0.5 * (tau[j] + tau[j + 1]))?;
            z[l.interior(j)..l.interior(j) + l.augmented()].copy_from_slice(&y);
        }
    }
    // exact endpoints despite interpolation round-off
    z[l.node(0)..l.node(0) + 8].copy_from_slice(&game.initial.to_array());
    let last = l.node(l.n_segments);
    z.copy_within(last + 4..last + 8, last);
    z[l.terminal_time()] = tf_guess;
    Ok(z)
}
