//! Indirect single shooting on the saddle-point boundary-value problem.
//!
//! Both players' controls come from their pointwise optimality laws, so the
//! state and all eight costates evolve as one 16-dimensional system. The
//! unknowns are the initial costates and the terminal time; Newton's
//! method drives the nine terminal conditions to zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    capture_residual, evader_control_limit, hamiltonian, player_costate_derivative, pursuer_control_limit, state_derivative,
    transversality_residual, ControlPair, FullCostate, GameParameters, GameState, PlayerCostate, SpacecraftGame,
};
use crate::integrate::{integrate, integrate_sampled, Method};
use crate::trajectory::{unwrap_angles, Sample, Trajectory};
use crate::transcription::CollocationTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Number of equally spaced output samples, endpoints included.
    pub samples: usize,
    /// Integration fails once either radius drops to this value.
    pub r_floor: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: Method::default(),
            samples: 401,
            r_floor: 0.1,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.samples < 2 {
            return Err(Error::param("integrator.samples", "need at least 2"));
        }
        if !(self.r_floor >= 0.0) {
            return Err(Error::param("integrator.r_floor", "must be >= 0"));
        }
        Ok(())
    }
}

/// Initial costates of both players and the terminal time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingUnknowns {
    pub costate: FullCostate,
    pub terminal_time: f64,
}

impl ShootingUnknowns {
    pub fn to_array(&self) -> [f64; 9] {
        let mut u = [0.0; 9];
        u[..8].copy_from_slice(&self.costate.to_array());
        u[8] = self.terminal_time;
        u
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self {
            costate: FullCostate::from_slice(&u[..8]),
            terminal_time: u[8],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("shooting unknowns must be finite".into()));
        }
        if !(self.terminal_time > 0.0) {
            return Err(Error::param("terminal_time", "must be > 0"));
        }
        Ok(())
    }
}

/// Velocity costates past a zero crossing are flipped back when their size
/// is below this fraction of `|d lambda_v / dt| * t_f`.
const CROSSING_WINDOW: f64 = 1e-3;

/// Saddle-point controls with the singular-point fallback of both laws.
///
/// Away from the exact solution the velocity costates cross zero slightly
/// before or after `t_f`, and the pointwise laws would reverse the thrust
/// for the rest of the arc. Shortly after such a crossing (small costate
/// growing along its own rate) the pre-crossing direction is kept, which
/// makes the terminal residuals a smooth function of the unknowns. At the
/// terminal instant itself the rate-based limit is used outright.
pub fn saddle_controls(s: &GameState, lam: &FullCostate, mu: f64, tf: f64, terminal: bool) -> Result<(ControlPair, bool)> {
    let steer = |p: &crate::game::PlayerState, l: &PlayerCostate| -> Result<PlayerCostate> {
        let rate = player_costate_derivative(p, l, mu)?;
        let norm = l.velocity_norm();
        let past_zero = l.l_vr * rate.l_vr + l.l_vtheta * rate.l_vtheta > 0.0;
        let mut out = *l;
        if terminal {
            out.l_vr = 0.0;
            out.l_vtheta = 0.0;
        } else if past_zero && norm < CROSSING_WINDOW * rate.velocity_norm() * tf {
            out.l_vr = -l.l_vr;
            out.l_vtheta = -l.l_vtheta;
        }
        Ok(out)
    };
    let lp = steer(&s.pursuer, &lam.pursuer)?;
    let le = steer(&s.evader, &lam.evader)?;
    let p = pursuer_control_limit(&s.pursuer, &lp, mu)?;
    let e = evader_control_limit(&s.evader, &le, mu)?;
    Ok((
        ControlPair {
            delta_p: p.angle,
            delta_e: e.angle,
        },
        p.singular || e.singular,
    ))
}

/// Stage times of the final step land on `t_f` only up to rounding.
fn at_terminal(t: f64, tf: f64) -> bool {
    t >= tf - 1e-12 * tf.abs().max(1.0)
}

fn coupled_rhs(t: f64, tf: f64, y: &[f64], params: &GameParameters, r_floor: f64, out: &mut [f64]) -> Result<()> {
    let s = GameState::from_slice(&y[..8]);
    if s.pursuer.r <= r_floor || s.evader.r <= r_floor {
        return Err(Error::Domain(format!("radius fell to the floor {r_floor}")));
    }
    let lam = FullCostate::from_slice(&y[8..]);
    let (u, _) = saddle_controls(&s, &lam, params.mu, tf, at_terminal(t, tf))?;
    let ds = state_derivative(&s, &u, params)?;
    let lp = player_costate_derivative(&s.pursuer, &lam.pursuer, params.mu)?;
    let le = player_costate_derivative(&s.evader, &lam.evader, params.mu)?;
    out[..8].copy_from_slice(&ds.to_array());
    out[8..12].copy_from_slice(&lp.to_array());
    out[12..].copy_from_slice(&le.to_array());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSolution {
    pub terminal_state: GameState,
    pub terminal_costate: FullCostate,
    pub trajectory: Trajectory,
    /// Hamiltonian at each sample.
    pub hamiltonian: Vec<f64>,
    /// Whether either control law was singular at each sample.
    pub singular: Vec<bool>,
}

/// Integrates states and costates of both players over `[0, t_f]`.
pub fn integrate_coupled_system(
    s0: &GameState,
    lam0: &FullCostate,
    tf: f64,
    params: &GameParameters,
    opts: &IntegratorOptions,
) -> Result<CoupledSolution> {
    opts.validate()?;
    if !(tf > 0.0 && tf.is_finite()) {
        return Err(Error::param("terminal_time", "must be > 0"));
    }
    let mut y0 = s0.to_array().to_vec();
    y0.extend_from_slice(&lam0.to_array());
    let times: Vec<f64> = (0..opts.samples)
        .map(|k| tf * k as f64 / (opts.samples - 1) as f64)
        .collect();
    let sampled = integrate_sampled(
        |t, y: &[f64], dy: &mut [f64]| coupled_rhs(t, tf, y, params, opts.r_floor, dy),
        0.0,
        &y0,
        &times,
        &opts.method,
    )?;
    let mut samples = Vec::with_capacity(times.len());
    let mut ham = Vec::with_capacity(times.len());
    let mut singular = Vec::with_capacity(times.len());
    for (t, y) in sampled.times.iter().zip(&sampled.states) {
        let s = GameState::from_slice(&y[..8]);
        let lam = FullCostate::from_slice(&y[8..]);
        let (u, sing) = saddle_controls(&s, &lam, params.mu, tf, at_terminal(*t, tf))?;
        ham.push(hamiltonian(&s, &lam, &u, params)?);
        singular.push(sing);
        samples.push(Sample {
            t: *t,
            state: s,
            pursuer_costate: Some(lam.pursuer),
            evader_costate: Some(lam.evader),
            delta_p: Some(u.delta_p),
            delta_e: Some(u.delta_e),
        });
    }
    let last = sampled.states.last().expect("at least two samples");
    Ok(CoupledSolution {
        terminal_state: GameState::from_slice(&last[..8]),
        terminal_costate: FullCostate::from_slice(&last[8..]),
        trajectory: Trajectory::new(samples)?,
        hamiltonian: ham,
        singular,
    })
}

fn terminal_residual(s: &GameState, lam: &FullCostate) -> Result<[f64; 9]> {
    let [dr, dth] = capture_residual(s);
    let (p, e) = (&lam.pursuer, &lam.evader);
    Ok([
        dr,
        dth,
        p.l_vr,
        p.l_vtheta,
        e.l_vr,
        e.l_vtheta,
        e.l_r + p.l_r,
        e.l_theta + p.l_theta,
        transversality_residual(s, p.l_r, p.l_theta)?,
    ])
}

/// Nine terminal conditions: capture (2), pursuer and evader velocity
/// costates (2 + 2), opposite position costates (2), transversality (1).
pub fn tpbvp_residual(u: &ShootingUnknowns, game: &SpacecraftGame, opts: &IntegratorOptions) -> Result<[f64; 9]> {
    u.validate()?;
    let mut y0 = game.initial.to_array().to_vec();
    y0.extend_from_slice(&u.costate.to_array());
    let yf = integrate(
        |t, y: &[f64], dy: &mut [f64]| coupled_rhs(t, u.terminal_time, y, &game.params, opts.r_floor, dy),
        0.0,
        &y0,
        u.terminal_time,
        &opts.method,
    )?;
    terminal_residual(&GameState::from_slice(&yf[..8]), &FullCostate::from_slice(&yf[8..]))
}

/// Hamiltonian at `t = 0`. It is constant along extremals, so `H(0) = 0`
/// is equivalent to the transversality condition and depends smoothly on
/// the unknowns.
pub fn initial_hamiltonian(u: &ShootingUnknowns, game: &SpacecraftGame) -> Result<f64> {
    let (c, _) = saddle_controls(&game.initial, &u.costate, game.params.mu, u.terminal_time, false)?;
    hamiltonian(&game.initial, &u.costate, &c, &game.params)
}

/// Residual solved by Newton: the terminal conditions with the last
/// entry replaced by `H(0)`.
fn newton_residual(u: &ShootingUnknowns, game: &SpacecraftGame, opts: &IntegratorOptions) -> Result<([f64; 9], [f64; 9])> {
    let official = tpbvp_residual(u, game, opts)?;
    let mut smooth = official;
    smooth[8] = initial_hamiltonian(u, game)?;
    Ok((official, smooth))
}

/// Terminal values of a collocation solution re-propagated with its own
/// interpolated controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reintegration {
    pub terminal_state: GameState,
    pub terminal_costate: PlayerCostate,
    /// `max(|r_p - r_e|, |theta_p - theta_e|)` at `t_f`.
    pub capture_residual: f64,
    /// `max(|lam_vrp|, |lam_vthp|)` at `t_f`.
    pub costate_residual: f64,
}

/// Integrates the states and the pursuer's costates from the collocation
/// initial values. The evader's angle is the quadratic leader interpolant;
/// the pursuer's is linear between unwrapped node values.
pub fn reintegrate_collocation(c: &CollocationTrajectory, game: &SpacecraftGame, method: &Method) -> Result<Reintegration> {
    if c.times.len() < 2 || c.costates.is_empty() {
        return Err(Error::Schema("collocation trajectory has fewer than two nodes".into()));
    }
    let delta_p: Vec<f64> = unwrap_angles(&c.follower.iter().map(|u| Some(u[0])).collect::<Vec<_>>())
        .into_iter()
        .map(|x| x.expect("all present"))
        .collect();
    let pursuer_angle = |t: f64| {
        let k = c.times.partition_point(|&x| x <= t).clamp(1, c.times.len() - 1) - 1;
        let s = ((t - c.times[k]) / (c.times[k + 1] - c.times[k])).clamp(0.0, 1.0);
        delta_p[k] + s * (delta_p[k + 1] - delta_p[k])
    };
    let mut y0 = c.states[0].clone();
    y0.extend_from_slice(&c.costates[0]);
    let yf = integrate(
        |t, y: &[f64], dy: &mut [f64]| {
            let s = GameState::from_slice(&y[..8]);
            let u = ControlPair {
                delta_p: pursuer_angle(t),
                delta_e: c.leader_at(t)[0],
            };
            dy[..8].copy_from_slice(&state_derivative(&s, &u, &game.params)?.to_array());
            let dl = player_costate_derivative(&s.pursuer, &PlayerCostate::from_slice(&y[8..]), game.params.mu)?;
            dy[8..].copy_from_slice(&dl.to_array());
            Ok(())
        },
        0.0,
        &y0,
        c.terminal_time,
        method,
    )?;
    let terminal_state = GameState::from_slice(&yf[..8]);
    let terminal_costate = PlayerCostate::from_slice(&yf[8..]);
    let [dr, dth] = capture_residual(&terminal_state);
    Ok(Reintegration {
        terminal_state,
        terminal_costate,
        capture_residual: dr.abs().max(dth.abs()),
        costate_residual: terminal_costate.l_vr.abs().max(terminal_costate.l_vtheta.abs()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingOptions {
    pub integrator: IntegratorOptions,
    /// Convergence test on `||residual||_inf`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative finite-difference step of the Newton Jacobian.
    pub fd_relative_step: f64,
    pub max_halvings: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorOptions::default(),
            tolerance: 1e-8,
            max_iterations: 50,
            fd_relative_step: 1e-7,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShootingStatus {
    Converged,
    MaxIter,
    SingularJacobian,
    LineSearchFailure,
    PropagationFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingResult {
    pub unknowns: ShootingUnknowns,
    pub residual: [f64; 9],
    pub residual_norm: f64,
    pub status: ShootingStatus,
    pub iterations: usize,
    /// `||delta u||_inf` of every accepted Newton step.
    pub step_norms: Vec<f64>,
    pub message: String,
    /// Dense trajectory at the returned unknowns, when it integrates.
    pub solution: Option<CoupledSolution>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Damped Newton iteration with a forward-difference Jacobian. The
/// transversality condition is imposed through `H(0) = 0`; convergence is
/// judged on the terminal residual.
pub fn solve_tpbvp(u0: &ShootingUnknowns, game: &SpacecraftGame, opts: &ShootingOptions) -> Result<ShootingResult> {
    opts.integrator.validate()?;
    u0.validate()?;
    let residual = |u: &[f64; 9]| newton_residual(&ShootingUnknowns::from_slice(u), game, &opts.integrator);
    let mut u = u0.to_array();
    let mut step_norms = Vec::new();
    let finish = |u: [f64; 9], res: [f64; 9], status, iterations, step_norms, message: String| {
        let unknowns = ShootingUnknowns::from_slice(&u);
        let solution =
            integrate_coupled_system(&game.initial, &unknowns.costate, unknowns.terminal_time, &game.params, &opts.integrator).ok();
        ShootingResult {
            unknowns,
            residual: res,
            residual_norm: inf_norm(&res),
            status,
            iterations,
            step_norms,
            message,
            solution,
        }
    };
    let (mut official, mut res) = match residual(&u) {
        Ok(r) => r,
        Err(e) => return Ok(finish(u, [f64::NAN; 9], ShootingStatus::PropagationFailure, 0, step_norms, e.to_string())),
    };
    let norm2 = |r: &[f64; 9]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    for iter in 0..opts.max_iterations {
        if inf_norm(&official) <= opts.tolerance {
            return Ok(finish(u, official, ShootingStatus::Converged, iter, step_norms, "converged".into()));
        }
        let columns: Vec<Result<[f64; 9]>> = (0..9)
            .into_par_iter()
            .map(|j| {
                let h = opts.fd_relative_step * u[j].abs().max(1.0);
                let mut up = u;
                up[j] += h;
                let (_, rp) = residual(&up)?;
                Ok(std::array::from_fn(|i| (rp[i] - res[i]) / h))
            })
            .collect();
        let mut jac = nalgebra::SMatrix::<f64, 9, 9>::zeros();
        for (j, col) in columns.into_iter().enumerate() {
            match col {
                Ok(c) => jac.set_column(j, &nalgebra::SVector::from(c)),
                Err(e) => {
                    return Ok(finish(u, official, ShootingStatus::PropagationFailure, iter, step_norms, e.to_string()));
                }
            }
        }
        let delta = jac.lu().solve(&-nalgebra::SVector::from(res));
        let Some(delta) = delta.filter(|d| d.iter().all(|v| v.is_finite())) else {
            return Ok(finish(u, official, ShootingStatus::SingularJacobian, iter, step_norms, "singular Newton jacobian".into()));
        };
        let r0 = norm2(&res);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: [f64; 9] = std::array::from_fn(|i| u[i] + alpha * delta[i]);
            if trial[8] > 0.0 {
                if let Ok((o, r)) = residual(&trial) {
                    if norm2(&r) < r0 || inf_norm(&o) <= opts.tolerance {
                        accepted = Some((trial, o, r));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let Some((next, o, r)) = accepted else {
            return Ok(finish(u, official, ShootingStatus::LineSearchFailure, iter, step_norms, "no step reduced the residual".into()));
        };
        step_norms.push(alpha * delta.amax());
        u = next;
        official = o;
        res = r;
    }
    let status = if inf_norm(&official) <= opts.tolerance {
        ShootingStatus::Converged
    } else {
        ShootingStatus::MaxIter
    };
    Ok(finish(u, official, status, opts.max_iterations, step_norms, format!("{status:?}")))
}

/// Shooting unknowns from a collocation solution that carries the
/// pursuer's costates only.
///
/// The pursuer's initial costates and `t_f` are read off directly. The
/// evader's costates start from their terminal values (zero velocity
/// costates, position costates opposite to the pursuer's) and are
/// integrated backwards along the linearly interpolated evader states.
pub fn seed_from_collocation(traj: &Trajectory, params: &GameParameters) -> Result<ShootingUnknowns> {
    let first = traj.samples.first().ok_or_else(|| Error::Schema("empty seed trajectory".into()))?;
    let last = traj.samples.last().expect("non-empty");
    let (Some(p0), Some(pf)) = (first.pursuer_costate, last.pursuer_costate) else {
        return Err(Error::Schema("seed trajectory lacks pursuer costates".into()));
    };
    let tf = traj.terminal_time();
    let evader_at = |t: f64| -> Result<crate::game::PlayerState> {
        let v: Vec<f64> = ["v_re", "v_the", "r_e", "th_e"]
            .iter()
            .map(|c| traj.interpolate(c, t))
            .collect::<Result<_>>()?;
        Ok(crate::game::PlayerState::from_slice(&v))
    };
    let terminal = [0.0, 0.0, -pf.l_r, -pf.l_theta];
    let steps = 20 * traj.samples.len();
    let le0 = integrate(
        |t, l: &[f64], dl: &mut [f64]| {
            let d = player_costate_derivative(&evader_at(t)?, &PlayerCostate::from_slice(l), params.mu)?;
            dl.copy_from_slice(&d.to_array());
            Ok(())
        },
        tf,
        &terminal,
        0.0,
        &Method::Rk4 { steps },
    )?;
    let unknowns = ShootingUnknowns {
        costate: FullCostate {
            pursuer: p0,
            evader: PlayerCostate::from_slice(&le0),
        },
        terminal_time: tf,
    };
    unknowns.validate()?;
    Ok(unknowns)
}
