//! Explicit Runge-Kutta integrators: classic fixed-step RK4 and the
//! Dormand-Prince 5(4) embedded pair with step-size control.
//!
//! Both accept any interval direction, so costates can be propagated
//! backwards from a terminal time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Method {
    /// Classic fourth-order scheme with a fixed number of steps over the span.
    Rk4 { steps: usize },
    /// Dormand-Prince 5(4) with mixed relative/absolute error control.
    DormandPrince { rtol: f64, atol: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::DormandPrince {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

impl Method {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::Rk4 { steps: 0 } => Err(Error::param("steps", "must be >= 1")),
            Method::DormandPrince { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
                Err(Error::param("rtol/atol", "tolerances must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Solution sampled at requested times.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub steps: usize,
}

const MAX_STEPS: usize = 2_000_000;

/// Integrates `dy/dt = f(t, y)` from `t0` and records the state at every
/// entry of `sample_times` (monotone in the direction of integration, the
/// first entry may equal `t0`).
pub fn integrate_sampled<F>(mut f: F, t0: f64, y0: &[f64], sample_times: &[f64], method: &Method) -> Result<Sampled>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    method.validate()?;
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut out = Sampled {
        times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        steps: 0,
    };
    let span = sample_times.last().map_or(0.0, |&te| te - t0);
    let dir = if span < 0.0 { -1.0 } else { 1.0 };
    let mut work = Workspace::new(n);
    let mut h = 0.0;

    for &target in sample_times {
        if (target - t) * dir < 0.0 {
            return Err(Error::param("sample_times", "must be monotone in the integration direction"));
        }
        match *method {
            Method::Rk4 { steps } => {
                let total = span.abs();
                let seg = (target - t).abs();
                let k = if total > 0.0 {
                    ((steps as f64) * seg / total).round().max(1.0) as usize
                } else {
                    0
                };
                if seg > 0.0 {
                    let hh = (target - t) / k as f64;
                    for i in 0..k {
                        let ti = t + i as f64 * hh;
                        rk4_step(&mut f, ti, &mut y, hh, &mut work).map_err(|e| propagation(ti, e))?;
                        out.steps += 1;
                    }
                }
                t = target;
            }
            Method::DormandPrince { rtol, atol } => {
                if h == 0.0 {
                    h = dir * initial_step(span.abs(), rtol);
                }
                while (target - t) * dir > 0.0 {
                    if out.steps >= MAX_STEPS {
                        return Err(Error::Propagation {
                            time: t,
                            reason: "maximum step count exceeded".into(),
                        });
                    }
                    let last = (t + h - target) * dir >= 0.0;
                    let hh = if last { target - t } else { h };
                    let err = dp_step(&mut f, t, &y, hh, &mut work, rtol, atol).map_err(|e| propagation(t, e))?;
                    out.steps += 1;
                    if err <= 1.0 {
                        t = if last { target } else { t + hh };
                        y.copy_from_slice(&work.y_new);
                    }
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    let next = hh * fac;
                    // keep the trial step that was clipped to hit a sample point
                    // from shrinking the following steps
                    if !(last && err <= 1.0) || next.abs() > h.abs() {
                        h = next;
                    }
                    if h.abs() < 1e-14 * t.abs().max(1.0) {
                        return Err(Error::Propagation {
                            time: t,
                            reason: "step size underflow".into(),
                        });
                    }
                }
            }
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Propagation {
                time: t,
                reason: "state became non-finite".into(),
            });
        }
        out.times.push(target);
        out.states.push(y.clone());
    }
    Ok(out)
}

/// Integrates to `t1` and returns only the final state.
pub fn integrate<F>(f: F, t0: f64, y0: &[f64], t1: f64, method: &Method) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut s = integrate_sampled(f, t0, y0, &[t1], method)?;
    Ok(s.states.pop().expect("one sample requested"))
}

fn propagation(time: f64, e: Error) -> Error {
    match e {
        Error::Propagation { .. } => e,
        other => Error::Propagation {
            time,
            reason: other.to_string(),
        },
    }
}

fn initial_step(span: f64, rtol: f64) -> f64 {
    if span == 0.0 {
        return 1.0;
    }
    (span * rtol.powf(0.2)).min(span * 0.1)
}

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
        }
    }
}

fn rk4_step<F>(f: &mut F, t: f64, y: &mut [f64], h: f64, w: &mut Workspace) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let [k1, k2, k3, k4, ..] = &mut w.k;
    let tmp = &mut w.tmp;
    f(t, y, k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, tmp, k4)?;
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One trial step; the candidate lands in `w.y_new`, returns the scaled
/// error norm (accept when <= 1).
fn dp_step<F>(f: &mut F, t: f64, y: &[f64], h: f64, w: &mut Workspace, rtol: f64, atol: f64) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    f(t, y, &mut w.k[0])?;
    for s in 1..7 {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..s {
                acc += A[s][j] * w.k[j][i];
            }
            w.tmp[i] = y[i] + h * acc;
        }
        f(t + C[s] * h, &w.tmp, &mut w.k[s])?;
    }
    // stage 7 is evaluated at the fifth-order solution
    w.y_new.copy_from_slice(&w.tmp);
    let mut sum = 0.0;
    for i in 0..n {
        let mut e = 0.0;
        for s in 0..7 {
            e += E[s] * w.k[s][i];
        }
        let sc = atol + rtol * y[i].abs().max(w.y_new[i].abs());
        let r = h * e / sc;
        sum += r * r;
    }
    let err = (sum / n as f64).sqrt();
    if !err.is_finite() {
        return Err(Error::Domain("non-finite error estimate".into()));
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0];
        Ok(())
    }

    fn oscillator(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        dy[0] = y[1];
        dy[1] = -y[0];
        Ok(())
    }

    #[test]
    fn dopri_matches_exponential() {
        let y = integrate(decay, 0.0, &[1.0], 2.0, &Method::default()).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn backwards_integration() {
        let y = integrate(decay, 2.0, &[(-2.0f64).exp()], 0.0, &Method::default()).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
        let y = integrate(decay, 1.0, &[1.0], 0.0, &Method::Rk4 { steps: 200 }).unwrap();
        assert!((y[0] - 1.0f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn samples_hit_requested_times() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.3).collect();
        let s = integrate_sampled(oscillator, 0.0, &[0.0, 1.0], &times, &Method::default()).unwrap();
        assert_eq!(s.times, times);
        for (t, y) in s.times.iter().zip(&s.states) {
            assert!((y[0] - t.sin()).abs() < 1e-9);
            assert!((y[1] - t.cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let exact = 3.0f64.sin();
        let err = |steps| {
            let y = integrate(oscillator, 0.0, &[0.0, 1.0], 3.0, &Method::Rk4 { steps }).unwrap();
            (y[0] - exact).abs()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn rhs_error_becomes_propagation_failure() {
        let f = |t: f64, _y: &[f64], dy: &mut [f64]| {
            if t > 0.5 {
                return Err(Error::Domain("radius below floor".into()));
            }
            dy[0] = 1.0;
            Ok(())
        };
        match integrate(f, 0.0, &[0.0], 1.0, &Method::default()) {
            Err(Error::Propagation { time, .. }) => assert!(time > 0.3 && time <= 0.5 + 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_options_rejected() {
        assert!(integrate(decay, 0.0, &[1.0], 1.0, &Method::Rk4 { steps: 0 }).is_err());
        assert!(integrate(decay, 0.0, &[1.0], 1.0, &Method::DormandPrince { rtol: 0.0, atol: 1e-9 }).is_err());
    }
}
