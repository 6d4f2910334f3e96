//! Planar spacecraft pursuit-evasion game.
//!
//! Both players are equal-mass point masses in an inverse-square gravity
//! field, each steering a constant-magnitude thrust by its direction angle.
//! The pursuer minimizes the capture time, the evader maximizes it. State per
//! player is `(v_r, v_theta, r, theta)` in polar coordinates; all quantities
//! are normalized (mu = 1 in the benchmark).
//!
//! Everything in this module is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Velocity-costate norm below which a thrust angle is undetermined.
pub const SINGULAR_COSTATE_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameParameters {
    /// Pursuer thrust acceleration.
    pub thrust_pursuer: f64,
    /// Evader thrust acceleration.
    pub thrust_evader: f64,
    /// Gravitational parameter.
    pub mu: f64,
}

impl Default for GameParameters {
    fn default() -> Self {
        Self {
            thrust_pursuer: 0.05,
            thrust_evader: 0.0025,
            mu: 1.0,
        }
    }
}

impl GameParameters {
    pub fn new(thrust_pursuer: f64, thrust_evader: f64, mu: f64) -> Result<Self> {
        let p = Self {
            thrust_pursuer,
            thrust_evader,
            mu,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks signs and that the pursuer out-thrusts the evader. A coasting
    /// evader (zero thrust) is allowed.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("thrust_pursuer", self.thrust_pursuer), ("mu", self.mu)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !self.thrust_evader.is_finite() || self.thrust_evader < 0.0 {
            return Err(Error::param("thrust_evader", format!("must be finite and >= 0, got {}", self.thrust_evader)));
        }
        if self.thrust_pursuer <= self.thrust_evader {
            return Err(Error::param(
                "thrust_pursuer",
                format!(
                    "must exceed thrust_evader ({} <= {}) for capture to be achievable",
                    self.thrust_pursuer, self.thrust_evader
                ),
            ));
        }
        Ok(())
    }
}

/// Polar state of one player. Also used for its time derivative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerState {
    pub v_r: f64,
    pub v_theta: f64,
    pub r: f64,
    /// Polar angle, unwrapped.
    pub theta: f64,
}

impl PlayerState {
    pub const fn new(v_r: f64, v_theta: f64, r: f64, theta: f64) -> Self {
        Self {
            v_r,
            v_theta,
            r,
            theta,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.v_r, self.v_theta, self.r, self.theta]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    fn check(&self, who: &str) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("{who} state is not finite: {self:?}")));
        }
        if self.r <= 0.0 {
            return Err(Error::Domain(format!("{who} radius must be > 0, got {}", self.r)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameState {
    pub pursuer: PlayerState,
    pub evader: PlayerState,
}

impl GameState {
    /// Benchmark start: pursuer on the unit circular orbit, evader on a
    /// circular orbit of radius 1.05 leading by 0.4 rad.
    pub fn benchmark() -> Self {
        Self {
            pursuer: PlayerState::new(0.0, 1.0, 1.0, 0.0),
            evader: PlayerState::new(0.0, 0.9759, 1.05, 0.4),
        }
    }

    /// Layout `[v_rp, v_thp, r_p, th_p, v_re, v_the, r_e, th_e]`.
    pub fn to_array(self) -> [f64; 8] {
        let p = self.pursuer.to_array();
        let e = self.evader.to_array();
        [p[0], p[1], p[2], p[3], e[0], e[1], e[2], e[3]]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            pursuer: PlayerState::from_slice(&x[0..4]),
            evader: PlayerState::from_slice(&x[4..8]),
        }
    }

    pub fn check(&self) -> Result<()> {
        self.pursuer.check("pursuer")?;
        self.evader.check("evader")
    }
}

/// Costates of one player's four state components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerCostate {
    pub l_vr: f64,
    pub l_vtheta: f64,
    pub l_r: f64,
    pub l_theta: f64,
}

/// The follower in the benchmark is the pursuer.
pub type FollowerCostate = PlayerCostate;

impl PlayerCostate {
    pub const fn new(l_vr: f64, l_vtheta: f64, l_r: f64, l_theta: f64) -> Self {
        Self {
            l_vr,
            l_vtheta,
            l_r,
            l_theta,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.l_vr, self.l_vtheta, self.l_r, self.l_theta]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn scaled(self, a: f64) -> Self {
        Self::new(a * self.l_vr, a * self.l_vtheta, a * self.l_r, a * self.l_theta)
    }

    pub fn velocity_norm(&self) -> f64 {
        self.l_vr.hypot(self.l_vtheta)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FullCostate {
    pub pursuer: PlayerCostate,
    pub evader: PlayerCostate,
}

impl FullCostate {
    pub fn to_array(self) -> [f64; 8] {
        let p = self.pursuer.to_array();
        let e = self.evader.to_array();
        [p[0], p[1], p[2], p[3], e[0], e[1], e[2], e[3]]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            pursuer: PlayerCostate::from_slice(&x[0..4]),
            evader: PlayerCostate::from_slice(&x[4..8]),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub delta_p: f64,
    pub delta_e: f64,
}

/// Output of an optimal-control law. When `singular` is set the costates
/// carry no direction and `angle` is a fallback value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustAngle {
    pub angle: f64,
    pub singular: bool,
}

/// Equations of motion of a single player.
pub fn player_derivative(s: &PlayerState, thrust: f64, angle: f64, mu: f64) -> Result<PlayerState> {
    s.check("player")?;
    if !angle.is_finite() {
        return Err(Error::Domain(format!("thrust angle is not finite: {angle}")));
    }
    let PlayerState { v_r, v_theta, r, .. } = *s;
    let (sin, cos) = angle.sin_cos();
    Ok(PlayerState {
        v_r: thrust * sin - mu / (r * r) + v_theta * v_theta / r,
        v_theta: thrust * cos - v_r * v_theta / r,
        r: v_r,
        theta: v_theta / r,
    })
}

/// Joint equations of motion; the two blocks are decoupled.
pub fn state_derivative(s: &GameState, u: &ControlPair, p: &GameParameters) -> Result<GameState> {
    Ok(GameState {
        pursuer: player_derivative(&s.pursuer, p.thrust_pursuer, u.delta_p, p.mu)?,
        evader: player_derivative(&s.evader, p.thrust_evader, u.delta_e, p.mu)?,
    })
}

/// `-dH/dx` for one player's block. The form is identical for both players
/// because the thrust terms do not depend on the state.
pub fn player_costate_derivative(s: &PlayerState, l: &PlayerCostate, mu: f64) -> Result<PlayerCostate> {
    s.check("player")?;
    let PlayerState { v_r, v_theta, r, .. } = *s;
    let PlayerCostate {
        l_vr,
        l_vtheta,
        l_r,
        l_theta,
    } = *l;
    Ok(PlayerCostate {
        l_vr: l_vtheta * v_theta / r - l_r,
        l_vtheta: (-2.0 * l_vr * v_theta + l_vtheta * v_r - l_theta) / r,
        l_r: (-2.0 * l_vr * mu + l_vr * v_theta * v_theta * r - l_vtheta * v_r * v_theta * r
            + l_theta * v_theta * r)
            / (r * r * r),
        l_theta: 0.0,
    })
}

pub fn follower_costate_derivative(
    sp: &PlayerState,
    lp: &FollowerCostate,
    p: &GameParameters,
) -> Result<FollowerCostate> {
    player_costate_derivative(sp, lp, p.mu)
}

/// Evader costate equations; only the shooting validator integrates these.
pub fn leader_costate_derivative(se: &PlayerState, le: &PlayerCostate, p: &GameParameters) -> Result<PlayerCostate> {
    player_costate_derivative(se, le, p.mu)
}

/// Thrust angle minimizing the pursuer's share of the Hamiltonian.
///
/// `delta_p = atan2(-l_vr, -l_vtheta)`; returns angle 0 flagged singular when
/// the velocity costates vanish.
pub fn optimal_pursuer_control(l_vr: f64, l_vtheta: f64) -> ThrustAngle {
    if l_vr.hypot(l_vtheta) < SINGULAR_COSTATE_NORM {
        return ThrustAngle {
            angle: 0.0,
            singular: true,
        };
    }
    ThrustAngle {
        angle: (-l_vr).atan2(-l_vtheta),
        singular: false,
    }
}

/// Thrust angle maximizing the evader's share of the Hamiltonian.
pub fn optimal_evader_control(l_vr: f64, l_vtheta: f64) -> ThrustAngle {
    if l_vr.hypot(l_vtheta) < SINGULAR_COSTATE_NORM {
        return ThrustAngle {
            angle: 0.0,
            singular: true,
        };
    }
    ThrustAngle {
        angle: l_vr.atan2(l_vtheta),
        singular: false,
    }
}

/// Pursuer control with the terminal-singularity fallback.
///
/// Near a point where the velocity costates vanish they behave like
/// `-(t_f - t) * dl/dt`, so the left limit of the optimal direction is read
/// off the costate rates instead.
pub fn pursuer_control_limit(s: &PlayerState, l: &PlayerCostate, mu: f64) -> Result<ThrustAngle> {
    let law = optimal_pursuer_control(l.l_vr, l.l_vtheta);
    if !law.singular {
        return Ok(law);
    }
    let rate = player_costate_derivative(s, l, mu)?;
    Ok(ThrustAngle {
        angle: rate.l_vr.atan2(rate.l_vtheta),
        singular: true,
    })
}

/// Evader counterpart of [`pursuer_control_limit`].
pub fn evader_control_limit(s: &PlayerState, l: &PlayerCostate, mu: f64) -> Result<ThrustAngle> {
    let law = optimal_evader_control(l.l_vr, l.l_vtheta);
    if !law.singular {
        return Ok(law);
    }
    let rate = player_costate_derivative(s, l, mu)?;
    Ok(ThrustAngle {
        angle: (-rate.l_vr).atan2(-rate.l_vtheta),
        singular: true,
    })
}

/// `dH/d(delta)` for a player with velocity costates `(l_vr, l_vtheta)`.
pub fn control_stationarity(l_vr: f64, l_vtheta: f64, thrust: f64, delta: f64) -> f64 {
    let (sin, cos) = delta.sin_cos();
    l_vr * thrust * cos - l_vtheta * thrust * sin
}

/// `d2H/d(delta)2`; positive at the pursuer's minimizer.
pub fn control_curvature(l_vr: f64, l_vtheta: f64, thrust: f64, delta: f64) -> f64 {
    let (sin, cos) = delta.sin_cos();
    -l_vr * thrust * sin - l_vtheta * thrust * cos
}

/// Hamiltonian of the time-optimal game (running cost 1).
pub fn hamiltonian(s: &GameState, lam: &FullCostate, u: &ControlPair, p: &GameParameters) -> Result<f64> {
    let f = state_derivative(s, u, p)?;
    let dot = |l: &PlayerCostate, f: &PlayerState| {
        l.l_vr * f.v_r + l.l_vtheta * f.v_theta + l.l_r * f.r + l.l_theta * f.theta
    };
    Ok(1.0 + dot(&lam.pursuer, &f.pursuer) + dot(&lam.evader, &f.evader))
}

/// `(r_p - r_e, theta_p - theta_e)`; zero on capture.
pub fn capture_residual(s: &GameState) -> [f64; 2] {
    [s.pursuer.r - s.evader.r, s.pursuer.theta - s.evader.theta]
}

/// Free-terminal-time condition with the terminal multipliers replaced by
/// the pursuer's position costates.
pub fn transversality_residual(s: &GameState, l_r: f64, l_theta: f64) -> Result<f64> {
    s.check()?;
    let p = &s.pursuer;
    let e = &s.evader;
    Ok(1.0 + l_r * (p.v_r - e.v_r) + l_theta * (p.v_theta / p.r - e.v_theta / e.r))
}

/// Interface the collocation transcription needs from a two-player game in
/// which the follower's optimal response is characterized by its costate
/// equations and an analytic control law.
///
/// All buffers are flat slices; dimensions are reported by the `*_dim`
/// methods and must stay consistent across calls.
pub trait GameDefinition: Send + Sync {
    fn state_dim(&self) -> usize;
    fn follower_costate_dim(&self) -> usize;
    fn leader_control_dim(&self) -> usize;
    fn follower_control_dim(&self) -> usize;
    /// Number of terminal conditions (capture, costate and transversality).
    fn terminal_dim(&self) -> usize;

    fn initial_state(&self) -> Vec<f64>;

    /// Follower control from its optimality law. Returns `true` when the
    /// law was singular and a fallback was used.
    fn follower_control(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<bool>;

    /// Follower control at the terminal instant, where the terminal
    /// conditions make the law singular by construction.
    fn follower_control_terminal(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<()>;

    fn dynamics(&self, state: &[f64], leader: &[f64], follower: &[f64], out: &mut [f64]) -> Result<()>;

    fn follower_costate_dynamics(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<()>;

    fn terminal_residual(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<()>;

    /// Second-order optimality value of the follower law (must be > 0).
    fn follower_curvature(&self, costate: &[f64], follower: &[f64]) -> f64;

    /// Hamiltonian with only the follower's costates (plus, at the terminal
    /// instant, the leader's costates implied by the terminal conditions).
    fn hamiltonian_sample(
        &self,
        state: &[f64],
        costate: &[f64],
        leader: &[f64],
        follower: &[f64],
        terminal: bool,
    ) -> Result<f64>;
}

/// The benchmark game with the evader leading and the pursuer following.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacecraftGame {
    pub params: GameParameters,
    pub initial: GameState,
}

impl Default for SpacecraftGame {
    fn default() -> Self {
        Self {
            params: GameParameters::default(),
            initial: GameState::benchmark(),
        }
    }
}

impl SpacecraftGame {
    pub fn new(params: GameParameters, initial: GameState) -> Result<Self> {
        params.validate()?;
        initial.check()?;
        Ok(Self { params, initial })
    }
}

impl GameDefinition for SpacecraftGame {
    fn state_dim(&self) -> usize {
        8
    }

    fn follower_costate_dim(&self) -> usize {
        4
    }

    fn leader_control_dim(&self) -> usize {
        1
    }

    fn follower_control_dim(&self) -> usize {
        1
    }

    fn terminal_dim(&self) -> usize {
        5
    }

    fn initial_state(&self) -> Vec<f64> {
        self.initial.to_array().to_vec()
    }

    fn follower_control(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<bool> {
        let law = pursuer_control_limit(
            &PlayerState::from_slice(&state[0..4]),
            &PlayerCostate::from_slice(costate),
            self.params.mu,
        )?;
        out[0] = law.angle;
        Ok(law.singular)
    }

    fn follower_control_terminal(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<()> {
        // Always the rate-based limit: it is smooth in the decision variables
        // while the velocity costates are driven to zero.
        let s = PlayerState::from_slice(&state[0..4]);
        let rate = player_costate_derivative(&s, &PlayerCostate::from_slice(costate), self.params.mu)?;
        out[0] = rate.l_vr.atan2(rate.l_vtheta);
        Ok(())
    }

    fn dynamics(&self, state: &[f64], leader: &[f64], follower: &[f64], out: &mut [f64]) -> Result<()> {
        let u = ControlPair {
            delta_p: follower[0],
            delta_e: leader[0],
        };
        let f = state_derivative(&GameState::from_slice(state), &u, &self.params)?;
        out[..8].copy_from_slice(&f.to_array());
        Ok(())
    }

    fn follower_costate_dynamics(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<()> {
        let d = follower_costate_derivative(
            &PlayerState::from_slice(&state[0..4]),
            &PlayerCostate::from_slice(costate),
            &self.params,
        )?;
        out[..4].copy_from_slice(&d.to_array());
        Ok(())
    }

    fn terminal_residual(&self, state: &[f64], costate: &[f64], out: &mut [f64]) -> Result<()> {
        let s = GameState::from_slice(state);
        let l = PlayerCostate::from_slice(costate);
        let capture = capture_residual(&s);
        out[0] = capture[0];
        out[1] = capture[1];
        out[2] = l.l_vr;
        out[3] = l.l_vtheta;
        out[4] = transversality_residual(&s, l.l_r, l.l_theta)?;
        Ok(())
    }

    fn follower_curvature(&self, costate: &[f64], follower: &[f64]) -> f64 {
        control_curvature(costate[0], costate[1], self.params.thrust_pursuer, follower[0])
    }

    fn hamiltonian_sample(
        &self,
        state: &[f64],
        costate: &[f64],
        leader: &[f64],
        follower: &[f64],
        terminal: bool,
    ) -> Result<f64> {
        let pursuer = PlayerCostate::from_slice(costate);
        let evader = if terminal {
            PlayerCostate::new(0.0, 0.0, -pursuer.l_r, -pursuer.l_theta)
        } else {
            PlayerCostate::default()
        };
        hamiltonian(
            &GameState::from_slice(state),
            &FullCostate { pursuer, evader },
            &ControlPair {
                delta_p: follower[0],
                delta_e: leader[0],
            },
            &self.params,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn printed_initial_state() -> GameState {
        // Initial state exactly as printed in the benchmark table, pursuer at rest.
        GameState {
            pursuer: PlayerState::new(0.0, 0.0, 1.0, 0.0),
            evader: PlayerState::new(0.0, 0.9759, 1.05, 0.4),
        }
    }

    #[test]
    fn pursuer_block_with_radial_thrust() {
        let p = GameParameters::default();
        let u = ControlPair {
            delta_p: FRAC_PI_2,
            delta_e: 0.0,
        };
        let d = state_derivative(&printed_initial_state(), &u, &p).unwrap();
        assert!((d.pursuer.v_r + 0.95).abs() < 1e-15);
        assert!(d.pursuer.v_theta.abs() < 1e-15);
        assert_eq!(d.pursuer.r, 0.0);
        assert_eq!(d.pursuer.theta, 0.0);
    }

    #[test]
    fn evader_starts_near_circular() {
        let p = GameParameters::default();
        let u = ControlPair::default();
        let d = state_derivative(&printed_initial_state(), &u, &p).unwrap();
        assert!(d.evader.v_r.abs() < 1e-4);
        assert!((d.evader.theta - 0.9759 / 1.05).abs() < 1e-15);
        // with delta_e = 0 the whole thrust is tangential
        assert!((d.evader.v_theta - p.thrust_evader).abs() < 1e-15);
    }

    #[test]
    fn circular_orbit_is_balanced_without_thrust() {
        for r in [0.5f64, 1.0, 1.05, 3.0] {
            let s = PlayerState::new(0.0, (1.0 / r).sqrt(), r, 0.2);
            let d = player_derivative(&s, 0.0, 1.3, 1.0).unwrap();
            assert!(d.v_r.abs() < 1e-14, "r = {r}: {}", d.v_r);
            assert_eq!(d.r, 0.0);
        }
    }

    #[test]
    fn rejects_bad_radius_and_nan() {
        let p = GameParameters::default();
        let mut s = GameState::benchmark();
        s.evader.r = 0.0;
        assert!(matches!(
            state_derivative(&s, &ControlPair::default(), &p),
            Err(Error::Domain(_))
        ));
        let mut s = GameState::benchmark();
        s.pursuer.v_r = f64::NAN;
        assert!(state_derivative(&s, &ControlPair::default(), &p).is_err());
        let bad = PlayerState::new(0.0, 1.0, -1.0, 0.0);
        assert!(player_costate_derivative(&bad, &PlayerCostate::default(), 1.0).is_err());
        assert!(transversality_residual(
            &GameState {
                pursuer: bad,
                evader: bad
            },
            1.0,
            1.0
        )
        .is_err());
    }

    #[test]
    fn costate_rates_hand_values() {
        let p = GameParameters::default();
        let sp = PlayerState::new(0.0, 0.0, 1.0, 0.0);
        let lp = PlayerCostate::new(1.0, 0.0, 0.0, 0.0);
        let d = follower_costate_derivative(&sp, &lp, &p).unwrap();
        assert_eq!(d.to_array(), [0.0, 0.0, -2.0, 0.0]);
        let e = leader_costate_derivative(&sp, &lp, &p).unwrap();
        assert_eq!(d, e);
        let z = follower_costate_derivative(&sp, &PlayerCostate::default(), &p).unwrap();
        assert_eq!(z.to_array(), [0.0; 4]);
    }

    #[test]
    fn control_laws_hand_values() {
        let tp = 0.05;
        let a = optimal_pursuer_control(-1.0, 0.0);
        assert!(!a.singular);
        assert!((a.angle - FRAC_PI_2).abs() < 1e-15);
        assert!(control_stationarity(-1.0, 0.0, tp, a.angle).abs() < 1e-15);
        assert!((control_curvature(-1.0, 0.0, tp, a.angle) - tp).abs() < 1e-15);
        assert_eq!(optimal_pursuer_control(0.0, -1.0).angle, 0.0);
        assert!(optimal_pursuer_control(0.0, 0.0).singular);

        let te = 0.0025;
        let b = optimal_evader_control(1.0, 0.0);
        assert!((b.angle - FRAC_PI_2).abs() < 1e-15);
        assert!((control_curvature(1.0, 0.0, te, b.angle) + te).abs() < 1e-15);
        assert_eq!(optimal_evader_control(0.0, 1.0).angle, 0.0);
        let z = optimal_evader_control(0.0, 0.0);
        assert!(z.singular);
        assert_eq!(z.angle, 0.0);
    }

    #[test]
    fn singular_fallback_uses_rate_direction() {
        let s = PlayerState::new(0.01, 1.02, 1.06, 2.9);
        let l = PlayerCostate::new(0.0, 0.0, -3.0, 2.5);
        let p = pursuer_control_limit(&s, &l, 1.0).unwrap();
        assert!(p.singular);
        // just before t_f the costates are -(t_f - t) * rate
        let rate = player_costate_derivative(&s, &l, 1.0).unwrap();
        let eps = 1e-4;
        let near = optimal_pursuer_control(-eps * rate.l_vr, -eps * rate.l_vtheta);
        assert!((near.angle - p.angle).abs() < 1e-12);
        let e = evader_control_limit(&s, &l, 1.0).unwrap();
        let near = optimal_evader_control(-eps * rate.l_vr, -eps * rate.l_vtheta);
        assert!((near.angle - e.angle).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_examples() {
        let p = GameParameters::default();
        let s = GameState::benchmark();
        let u = ControlPair {
            delta_p: 0.3,
            delta_e: -1.1,
        };
        assert_eq!(hamiltonian(&s, &FullCostate::default(), &u, &p).unwrap(), 1.0);

        let lam = FullCostate::from_slice(&[0.3, -1.2, 2.0, 0.7, -0.4, 0.1, 1.5, -0.7]);
        let lam2 = FullCostate::from_slice(&lam.to_array().map(|v| 2.0 * v));
        let h1 = hamiltonian(&s, &lam, &u, &p).unwrap() - 1.0;
        let h2 = hamiltonian(&s, &lam2, &u, &p).unwrap() - 1.0;
        assert!((h2 - 2.0 * h1).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_at_optimal_controls_matches_grid_search() {
        let p = GameParameters::default();
        let s = GameState {
            pursuer: PlayerState::new(0.02, 0.98, 0.97, 0.4),
            evader: PlayerState::new(-0.01, 0.97, 1.04, 0.8),
        };
        let lam = FullCostate::from_slice(&[12.0, 9.0, 15.0, -3.0, -10.0, -1.0, -8.0, 3.0]);
        let dp = optimal_pursuer_control(lam.pursuer.l_vr, lam.pursuer.l_vtheta).angle;
        let de = optimal_evader_control(lam.evader.l_vr, lam.evader.l_vtheta).angle;
        let h_opt = hamiltonian(&s, &lam, &ControlPair { delta_p: dp, delta_e: de }, &p).unwrap();

        // H separates in the two angles, so min over delta_p then max over delta_e.
        let grid: Vec<f64> = (0..360).map(|i| -PI + (i as f64) * 2.0 * PI / 360.0).collect();
        let h = |a: f64, b: f64| hamiltonian(&s, &lam, &ControlPair { delta_p: a, delta_e: b }, &p).unwrap();
        let best_p = grid.iter().map(|&a| h(a, de)).fold(f64::INFINITY, f64::min);
        let best_e = grid.iter().map(|&b| h(dp, b)).fold(f64::NEG_INFINITY, f64::max);
        let saddle = grid
            .iter()
            .map(|&b| grid.iter().map(|&a| h(a, b)).fold(f64::INFINITY, f64::min))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((h_opt - best_p).abs() < 1e-3);
        assert!((h_opt - best_e).abs() < 1e-3);
        assert!((h_opt - saddle).abs() < 1e-3);
    }

    #[test]
    fn capture_residual_examples() {
        let s = GameState::benchmark();
        let same = GameState {
            pursuer: s.evader,
            evader: s.evader,
        };
        assert_eq!(capture_residual(&same), [0.0, 0.0]);
        let c = capture_residual(&printed_initial_state());
        assert!((c[0] + 0.05).abs() < 1e-15 && (c[1] + 0.4).abs() < 1e-15);
        let swapped = GameState {
            pursuer: s.evader,
            evader: s.pursuer,
        };
        let d = capture_residual(&swapped);
        assert_eq!(d, [-c[0], -c[1]]);
    }

    #[test]
    fn transversality_examples() {
        let mut s = GameState::benchmark();
        s.pursuer.v_r = 1.0;
        s.evader.v_r = 0.0;
        s.pursuer.v_theta = 1.0;
        s.pursuer.r = 1.0;
        s.evader.v_theta = 1.0;
        s.evader.r = 1.0;
        assert_eq!(transversality_residual(&s, -1.0, 0.0).unwrap(), 0.0);
        assert_eq!(transversality_residual(&s, 0.0, 0.0).unwrap(), 1.0);
        let same = GameState {
            pursuer: s.evader,
            evader: s.evader,
        };
        assert_eq!(transversality_residual(&same, 3.7, -2.2).unwrap(), 1.0);
    }

    #[test]
    fn parameters_validate() {
        assert!(GameParameters::new(0.0, 0.0025, 1.0).is_err());
        assert!(GameParameters::new(0.05, 0.0, 1.0).is_ok());
        assert!(GameParameters::new(0.05, -1e-3, 1.0).is_err());
        assert!(GameParameters::new(0.0, 0.0, 1.0).is_err());
        assert!(GameParameters::new(0.05, 0.0025, -1.0).is_err());
        assert!(GameParameters::new(0.01, 0.02, 1.0).is_err());
        assert!(GameParameters::new(0.05, 0.0025, 1.0).is_ok());
    }

    #[test]
    fn spacecraft_game_terminal_residual_layout() {
        let g = SpacecraftGame::default();
        let s = GameState::benchmark();
        let mut out = [0.0; 5];
        g.terminal_residual(&s.to_array(), &[0.5, -0.25, 1.0, 2.0], &mut out).unwrap();
        let c = capture_residual(&s);
        assert_eq!(out[0..2], c);
        assert_eq!(out[2..4], [0.5, -0.25]);
        assert_eq!(out[4], transversality_residual(&s, 1.0, 2.0).unwrap());
    }

    fn player() -> impl Strategy<Value = PlayerState> {
        (-0.5..0.5f64, 0.2..1.5f64, 0.5..2.0f64, -3.0..3.0f64).prop_map(|(a, b, c, d)| PlayerState::new(a, b, c, d))
    }

    fn costate() -> impl Strategy<Value = PlayerCostate> {
        (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64)
            .prop_map(|(a, b, c, d)| PlayerCostate::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn blocks_are_separable(a in player(), b in player(), c in player(), dp in -PI..PI, de in -PI..PI) {
            let p = GameParameters::default();
            let u = ControlPair { delta_p: dp, delta_e: de };
            let f1 = state_derivative(&GameState { pursuer: a, evader: b }, &u, &p).unwrap();
            let f2 = state_derivative(&GameState { pursuer: a, evader: c }, &u, &p).unwrap();
            let f3 = state_derivative(&GameState { pursuer: c, evader: b }, &u, &p).unwrap();
            prop_assert_eq!(f1.pursuer, f2.pursuer);
            prop_assert_eq!(f1.evader, f3.evader);
        }

        #[test]
        fn costate_rates_are_linear(s in player(), l1 in costate(), l2 in costate(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let p = GameParameters::default();
            let comb = PlayerCostate::from_slice(
                &std::array::from_fn::<f64, 4, _>(|i| a * l1.to_array()[i] + b * l2.to_array()[i]),
            );
            let lhs = follower_costate_derivative(&s, &comb, &p).unwrap().to_array();
            let r1 = follower_costate_derivative(&s, &l1, &p).unwrap().to_array();
            let r2 = follower_costate_derivative(&s, &l2, &p).unwrap().to_array();
            for i in 0..4 {
                let rhs = a * r1[i] + b * r2[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-11 * (1.0 + rhs.abs()));
            }
            prop_assert_eq!(lhs[3], 0.0);
        }

        #[test]
        fn pursuer_law_is_stationary_minimum(lvr in -50.0..50.0f64, lvt in -50.0..50.0f64) {
            let tp = 0.05;
            let norm = lvr.hypot(lvt);
            prop_assume!(norm > 1e-6);
            let a = optimal_pursuer_control(lvr, lvt);
            prop_assert!(control_stationarity(lvr, lvt, tp, a.angle).abs() <= 1e-12 * tp * norm.max(1.0));
            prop_assert!(control_curvature(lvr, lvt, tp, a.angle) > 0.0);
            let b = optimal_evader_control(lvr, lvt);
            prop_assert!(control_stationarity(lvr, lvt, tp, b.angle).abs() <= 1e-12 * tp * norm.max(1.0));
            prop_assert!(control_curvature(lvr, lvt, tp, b.angle) < 0.0);
        }

        #[test]
        fn optimal_angles_dominate_grid(s in player(), e in player(), lp in costate(), le in costate()) {
            let p = GameParameters::default();
            let st = GameState { pursuer: s, evader: e };
            let lam = FullCostate { pursuer: lp, evader: le };
            let dp = optimal_pursuer_control(lp.l_vr, lp.l_vtheta).angle;
            let de = optimal_evader_control(le.l_vr, le.l_vtheta).angle;
            let h_opt = hamiltonian(&st, &lam, &ControlPair { delta_p: dp, delta_e: de }, &p).unwrap();
            for i in 0..360 {
                let a = -PI + (i as f64) * PI / 180.0;
                let hp = hamiltonian(&st, &lam, &ControlPair { delta_p: a, delta_e: de }, &p).unwrap();
                let he = hamiltonian(&st, &lam, &ControlPair { delta_p: dp, delta_e: a }, &p).unwrap();
                prop_assert!(h_opt <= hp + 1e-12);
                prop_assert!(h_opt >= he - 1e-12);
            }
        }

        #[test]
        fn costate_rates_match_hamiltonian_gradient(s in player(), e in player(), lp in costate(), le in costate(), dp in -PI..PI, de in -PI..PI) {
            let p = GameParameters::default();
            let lam = FullCostate { pursuer: lp, evader: le };
            let u = ControlPair { delta_p: dp, delta_e: de };
            let x = GameState { pursuer: s, evader: e }.to_array();
            let mut expected = follower_costate_derivative(&s, &lp, &p).unwrap().to_array().to_vec();
            expected.extend(leader_costate_derivative(&e, &le, &p).unwrap().to_array());
            let step = 1e-6;
            for i in 0..8 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += step;
                xm[i] -= step;
                let hp = hamiltonian(&GameState::from_slice(&xp), &lam, &u, &p).unwrap();
                let hm = hamiltonian(&GameState::from_slice(&xm), &lam, &u, &p).unwrap();
                let fd = -(hp - hm) / (2.0 * step);
                let scale = expected[i].abs().max(1.0);
                prop_assert!((fd - expected[i]).abs() <= 1e-5 * scale, "component {}: fd {} vs {}", i, fd, expected[i]);
            }
        }
    }
}
