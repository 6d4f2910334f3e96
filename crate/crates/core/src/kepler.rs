//! Unpowered two-body motion in polar coordinates.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::game::{player_derivative, PlayerState};
use crate::integrate::{integrate, Method};

/// Propagates a coasting player by `dt`. Bound orbits use Kepler's
/// equation; anything else falls back to numerical integration. The polar
/// angle stays unwrapped.
pub fn coast(s: &PlayerState, mu: f64, dt: f64) -> Result<PlayerState> {
    if !(s.r > 0.0) || !mu.is_finite() || mu <= 0.0 {
        return Err(Error::Domain(format!("cannot coast from {s:?} with mu = {mu}")));
    }
    let v2 = s.v_r * s.v_r + s.v_theta * s.v_theta;
    let inv_a = 2.0 / s.r - v2 / mu;
    let h = s.r * s.v_theta;
    if inv_a > 1e-9 && h.abs() > 1e-12 {
        Ok(elliptic(s, mu, 1.0 / inv_a, h, dt))
    } else {
        let y = integrate(
            |_t, y: &[f64], dy: &mut [f64]| {
                let d = player_derivative(&PlayerState::from_slice(y), 0.0, 0.0, mu)?;
                dy.copy_from_slice(&d.to_array());
                Ok(())
            },
            0.0,
            &s.to_array(),
            dt,
            &Method::default(),
        )?;
        Ok(PlayerState::from_slice(&y))
    }
}

fn elliptic(s: &PlayerState, mu: f64, a: f64, h: f64, dt: f64) -> PlayerState {
    let sqrt_mua = (mu * a).sqrt();
    let e_sin = s.r * s.v_r / sqrt_mua;
    let e_cos = 1.0 - s.r / a;
    let e = e_sin.hypot(e_cos);
    let ecc_anomaly0 = e_sin.atan2(e_cos);
    let n = (mu / (a * a * a)).sqrt();
    let mean = ecc_anomaly0 - e_sin + n * dt;
    let ecc = solve_kepler(mean, e);
    // true anomaly as a continuous function of the eccentric anomaly
    let beta = e / (1.0 + (1.0 - e * e).sqrt());
    let true_anomaly = |ea: f64| ea + 2.0 * (beta * ea.sin()).atan2(1.0 - beta * ea.cos());
    let dnu = true_anomaly(ecc) - true_anomaly(ecc_anomaly0);
    let r = a * (1.0 - e * ecc.cos());
    PlayerState {
        v_r: sqrt_mua * e * ecc.sin() / r,
        v_theta: h / r,
        r,
        theta: s.theta + h.signum() * dnu,
    }
}

fn solve_kepler(mean: f64, e: f64) -> f64 {
    // keep the revolution count so the result stays unwrapped
    let turns = (mean / (2.0 * PI)).round();
    let m = mean - turns * 2.0 * PI;
    let mut ea = if e < 0.8 { m } else { PI * m.signum() };
    for _ in 0..50 {
        let f = ea - e * ea.sin() - m;
        let step = f / (1.0 - e * ea.cos());
        ea -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    ea + turns * 2.0 * PI
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rk_coast(s: &PlayerState, dt: f64) -> PlayerState {
        let y = integrate(
            |_t, y: &[f64], dy: &mut [f64]| {
                let d = player_derivative(&PlayerState::from_slice(y), 0.0, 0.0, 1.0)?;
                dy.copy_from_slice(&d.to_array());
                Ok(())
            },
            0.0,
            &s.to_array(),
            dt,
            &Method::DormandPrince { rtol: 1e-12, atol: 1e-14 },
        )
        .unwrap();
        PlayerState::from_slice(&y)
    }

    #[test]
    fn matches_numerical_coasting() {
        let cases = [
            PlayerState::new(0.0, 0.9759, 1.05, 0.4),
            PlayerState::new(0.1, 1.1, 1.0, -0.3),
            PlayerState::new(-0.2, 0.8, 1.3, 2.0),
            PlayerState::new(0.05, -0.95, 1.0, 0.0),
        ];
        for s in cases {
            for dt in [0.1, 1.7, 3.0, 9.0] {
                let a = coast(&s, 1.0, dt).unwrap().to_array();
                let b = rk_coast(&s, dt).to_array();
                for i in 0..4 {
                    assert!((a[i] - b[i]).abs() < 1e-8, "{s:?} dt {dt} comp {i}: {} vs {}", a[i], b[i]);
                }
            }
        }
    }

    #[test]
    fn circular_orbit_keeps_radius() {
        let s = PlayerState::new(0.0, 1.0, 1.0, 0.0);
        let t = coast(&s, 1.0, 2.0 * PI).unwrap();
        assert!((t.r - 1.0).abs() < 1e-12);
        assert!((t.theta - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn escape_orbit_falls_back_to_integration() {
        let s = PlayerState::new(0.3, 1.5, 1.0, 0.0);
        let a = coast(&s, 1.0, 1.0).unwrap().to_array();
        let b = rk_coast(&s, 1.0).to_array();
        for i in 0..4 {
            assert!((a[i] - b[i]).abs() < 1e-8);
        }
    }
}
