//! Dense equality-constrained nonlinear programming.
//!
//! Solves
//!
//! ```text
//! minimize f(x)  subject to  c(x) = 0,  lower <= x <= upper
//! ```
//!
//! with a line-search SQP method: each major iteration solves the KKT system
//! of the equality-constrained QP, globalized by an exact (L1) penalty merit
//! function with a second-order correction against the Maratos effect.
//! Curvature comes from the problem's Lagrangian Hessian when it supplies one,
//! otherwise from a damped BFGS approximation. Derivatives default to central
//! finite differences.
//!
//! Multiplier convention: the Lagrangian is `L = f + lambda^T c`, so a KKT
//! point satisfies `grad f + J^T lambda = 0`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objective and equality constraints of a nonlinear program.
///
/// Implementations must be pure: the solver evaluates them from several
/// threads at once. A point outside the functions' domain should be
/// reported by returning non-finite values.
pub trait NlpProblem: Sync {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn constraints(&self, x: &[f64], out: &mut [f64]);

    fn lower_bounds(&self) -> Vec<f64> {
        vec![f64::NEG_INFINITY; self.n_vars()]
    }

    fn upper_bounds(&self) -> Vec<f64> {
        vec![f64::INFINITY; self.n_vars()]
    }

    /// Analytic gradient, if available.
    fn objective_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Analytic or structure-exploiting constraint Jacobian (`n_cons x n_vars`).
    fn constraint_jacobian(&self, _x: &[f64], _step: f64) -> Option<Result<DMatrix<f64>>> {
        None
    }

    /// Hessian of `lambda^T c(x)` plus the objective Hessian. When absent
    /// the solver falls back to quasi-Newton updates.
    fn lagrangian_hessian(&self, _x: &[f64], _multipliers: &[f64], _step: f64) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

/// Closure-backed problem, mostly for small programs and tests.
pub struct FnProblem<F, C> {
    pub n_vars: usize,
    pub n_cons: usize,
    pub objective: F,
    pub constraints: C,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl<F, C> FnProblem<F, C>
where
    F: Fn(&[f64]) -> f64 + Sync,
    C: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(n_vars: usize, n_cons: usize, objective: F, constraints: C) -> Self {
        Self {
            n_vars,
            n_cons,
            objective,
            constraints,
            lower: vec![f64::NEG_INFINITY; n_vars],
            upper: vec![f64::INFINITY; n_vars],
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }
}

impl<F, C> NlpProblem for FnProblem<F, C>
where
    F: Fn(&[f64]) -> f64 + Sync,
    C: Fn(&[f64], &mut [f64]) + Sync,
{
    fn n_vars(&self) -> usize {
        self.n_vars
    }
    fn n_cons(&self) -> usize {
        self.n_cons
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.objective)(x)
    }
    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        (self.constraints)(x, out)
    }
    fn lower_bounds(&self) -> Vec<f64> {
        self.lower.clone()
    }
    fn upper_bounds(&self) -> Vec<f64> {
        self.upper.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Feasibility tolerance on `||c(x)||_inf`.
    pub tol_constraint: f64,
    /// Tolerance on the projected Lagrangian gradient `||grad L||_inf`.
    pub tol_stationarity: f64,
    pub max_major_iterations: usize,
    /// Central finite-difference step.
    pub fd_step: f64,
    /// Initial weight of the constraint violation in the merit function.
    pub penalty_initial: f64,
    /// The penalty is raised to `penalty_margin * ||lambda||_inf` when smaller.
    pub penalty_margin: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Drive the constraints to zero by Levenberg-Marquardt steps before the
    /// SQP iterations start.
    pub restore_feasibility: bool,
    /// 0 silent, 1 iteration log.
    pub verbosity: u8,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_constraint: 1e-8,
            tol_stationarity: 1e-6,
            max_major_iterations: 500,
            fd_step: 1e-6,
            penalty_initial: 1.0,
            penalty_margin: 2.0,
            armijo: 1e-4,
            max_backtracks: 30,
            restore_feasibility: true,
            verbosity: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tol_constraint", self.tol_constraint),
            ("tol_stationarity", self.tol_stationarity),
            ("fd_step", self.fd_step),
            ("penalty_initial", self.penalty_initial),
            ("armijo", self.armijo),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("solver.{name}"), format!("must be > 0, got {v}")));
            }
        }
        if self.penalty_margin < 1.0 {
            return Err(Error::param("solver.penalty_margin", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub x: Vec<f64>,
    /// One per equality constraint, sign convention `L = f + lambda^T c`.
    pub multipliers: Vec<f64>,
    pub status: SolverStatus,
    pub objective: f64,
    pub constraint_norm: f64,
    pub stationarity_norm: f64,
    pub iterations: usize,
    /// Levenberg-Marquardt iterations spent before the SQP phase.
    pub restoration_iterations: usize,
    pub function_evaluations: usize,
    pub message: String,
}

/// Central-difference Jacobian of `f: R^n -> R^m`. Columns are evaluated
/// in parallel.
pub fn finite_difference_jacobian<F>(f: F, x: &[f64], m: usize, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if !(step > 0.0) {
        return Err(Error::param("step", "must be > 0"));
    }
    let n = x.len();
    let columns: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut xp = x.to_vec();
            let mut plus = vec![0.0; m];
            let mut minus = vec![0.0; m];
            xp[j] = x[j] + step;
            f(&xp, &mut plus);
            xp[j] = x[j] - step;
            f(&xp, &mut minus);
            let col: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * step)).collect();
            if col.iter().all(|v| v.is_finite()) {
                Ok(col)
            } else {
                Err(Error::NonFiniteJacobian { column: j })
            }
        })
        .collect();
    let mut jac = DMatrix::zeros(m, n);
    for (j, col) in columns.into_iter().enumerate() {
        jac.set_column(j, &DVector::from_vec(col?));
    }
    Ok(jac)
}

fn objective_gradient<P: NlpProblem + ?Sized>(p: &P, x: &[f64], step: f64) -> Result<DVector<f64>> {
    if let Some(g) = p.objective_gradient(x) {
        return Ok(DVector::from_vec(g));
    }
    let jac = finite_difference_jacobian(|z, out| out[0] = p.objective(z), x, 1, step)?;
    Ok(jac.row(0).transpose())
}

fn constraint_jacobian<P: NlpProblem + ?Sized>(p: &P, x: &[f64], step: f64) -> Result<DMatrix<f64>> {
    match p.constraint_jacobian(x, step) {
        Some(j) => j,
        None => finite_difference_jacobian(|z, out| p.constraints(z, out), x, p.n_cons(), step),
    }
}

const BOUND_EPS: f64 = 1e-12;

/// Zeroes gradient components that point out of an active bound.
fn project_gradient(grad: &mut DVector<f64>, x: &[f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        let at_lower = x[i] <= lower[i] + BOUND_EPS * lower[i].abs().max(1.0);
        let at_upper = x[i] >= upper[i] - BOUND_EPS * upper[i].abs().max(1.0);
        if (at_lower && grad[i] > 0.0) || (at_upper && grad[i] < 0.0) {
            grad[i] = 0.0;
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// `(||c(x)||_inf, ||P(grad f + J^T lambda)||_inf)` with finite-difference
/// derivatives, `P` removing components blocked by active bounds.
pub fn kkt_residuals<P: NlpProblem + ?Sized>(p: &P, x: &[f64], multipliers: &[f64], step: f64) -> Result<(f64, f64)> {
    if x.len() != p.n_vars() {
        return Err(Error::Dimension {
            expected: p.n_vars(),
            got: x.len(),
            context: "kkt_residuals x",
        });
    }
    if multipliers.len() != p.n_cons() {
        return Err(Error::Dimension {
            expected: p.n_cons(),
            got: multipliers.len(),
            context: "kkt_residuals multipliers",
        });
    }
    let mut c = vec![0.0; p.n_cons()];
    p.constraints(x, &mut c);
    let g = objective_gradient(p, x, step)?;
    let j = constraint_jacobian(p, x, step)?;
    let mut grad_l = g + j.tr_mul(&DVector::from_column_slice(multipliers));
    project_gradient(&mut grad_l, x, &p.lower_bounds(), &p.upper_bounds());
    Ok((inf_norm(&c), inf_norm(grad_l.as_slice())))
}

/// Least-squares multipliers `argmin ||g + J^T lambda||` over the free variables.
fn least_squares_multipliers(g: &DVector<f64>, jac: &DMatrix<f64>, free: &[bool]) -> DVector<f64> {
    let m = jac.nrows();
    let mut jf = jac.clone();
    let mut gf = g.clone();
    for (i, &is_free) in free.iter().enumerate() {
        if !is_free {
            jf.column_mut(i).fill(0.0);
            gf[i] = 0.0;
        }
    }
    let mut jjt = &jf * jf.transpose();
    let rhs = -(&jf * gf);
    let scale = jjt.diagonal().max().max(1.0);
    let mut reg = 0.0;
    loop {
        if let Some(ch) = jjt.clone().cholesky() {
            return ch.solve(&rhs);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        if reg > scale {
            return DVector::zeros(m);
        }
        for i in 0..m {
            jjt[(i, i)] += reg;
        }
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
}

impl Point {
    fn eval<P: NlpProblem + ?Sized>(p: &P, x: Vec<f64>) -> Option<Self> {
        let f = p.objective(&x);
        let mut c = vec![0.0; p.n_cons()];
        p.constraints(&x, &mut c);
        if f.is_finite() && c.iter().all(|v| v.is_finite()) {
            Some(Point { x, f, c })
        } else {
            None
        }
    }

    fn merit(&self, rho: f64) -> f64 {
        self.f + rho * self.c.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Minimum-norm correction `-J^T (J J^T)^{-1} c` on the free variables.
fn min_norm_correction(jac: &DMatrix<f64>, c: &[f64], free: &[bool]) -> Option<DVector<f64>> {
    let mut jf = jac.clone();
    for (i, &is_free) in free.iter().enumerate() {
        if !is_free {
            jf.column_mut(i).fill(0.0);
        }
    }
    let jjt = &jf * jf.transpose();
    let y = jjt.cholesky()?.solve(&DVector::from_column_slice(c));
    Some(-(jf.transpose() * y))
}

/// Solves the equality-constrained QP
/// `min g^T d + d^T H d / 2  s.t.  J d + c = 0,  d_i = 0 for fixed i`,
/// returning the step and the QP multipliers.
fn solve_qp(h: &DMatrix<f64>, g: &DVector<f64>, jac: &DMatrix<f64>, c: &[f64], free: &[bool]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = g.len();
    let m = jac.nrows();
    let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
    let nf = idx.len();
    let dim = nf + m;
    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            k[(a, b)] = h[(i, j)];
        }
        for r in 0..m {
            k[(nf + r, a)] = jac[(r, i)];
            k[(a, nf + r)] = jac[(r, i)];
        }
        rhs[a] = -g[i];
    }
    for r in 0..m {
        rhs[nf + r] = -c[r];
    }
    let scale = (0..dim).map(|i| k[(i, i)].abs()).fold(1.0, f64::max);
    let mut reg = 0.0;
    for _ in 0..8 {
        if reg > 0.0 {
            for r in 0..m {
                k[(nf + r, nf + r)] = -reg;
            }
        }
        if let Some(sol) = k.clone().lu().solve(&rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                let mut d = DVector::zeros(n);
                for (a, &i) in idx.iter().enumerate() {
                    d[i] = sol[a];
                }
                let lam = sol.rows(nf, m).into_owned();
                return Some((d, lam));
            }
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
    }
    None
}

/// Damped BFGS update keeping `b` positive definite.
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = theta * y + (1.0 - theta) * &bs;
    let sr = s.dot(&r);
    if !(sr > 1e-300) {
        return;
    }
    b.ger(-1.0 / sbs, &bs, &bs, 1.0);
    b.ger(1.0 / sr, &r, &r, 1.0);
}

/// Adds a diagonal shift until the curvature along the QP step is
/// positive, which convexifies an exact Hessian away from the solution.
fn convexified_step(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    jac: &DMatrix<f64>,
    c: &[f64],
    free: &[bool],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut shift = 0.0;
    let diag_scale = h.diagonal().amax().max(1.0);
    for _ in 0..12 {
        let mut hs = h.clone();
        if shift > 0.0 {
            for i in 0..hs.nrows() {
                hs[(i, i)] += shift;
            }
        }
        let Some((d, lam)) = solve_qp(&hs, g, jac, c, free) else {
            shift = if shift == 0.0 { 1e-4 * diag_scale } else { shift * 10.0 };
            continue;
        };
        // curvature in the tangent direction (remove the range-space part)
        let t = match min_norm_correction(jac, (jac * &d).as_slice(), free) {
            Some(corr) => &d + corr,
            None => d.clone(),
        };
        let tn = t.norm_squared();
        if tn <= 1e-20 * d.norm_squared().max(1e-300) || t.dot(&(&hs * &t)) > 1e-8 * tn {
            return Some((d, lam));
        }
        shift = if shift == 0.0 { 1e-4 * diag_scale } else { shift * 10.0 };
    }
    None
}

/// Levenberg-Marquardt on `||c(x)||^2` with the iterate projected onto the
/// bounds. Stops once feasible to `tol` or when no further progress is made.
fn restore<P: NlpProblem + ?Sized>(
    p: &P,
    mut cur: Point,
    clip: &dyn Fn(&mut [f64]),
    tol: f64,
    max_iter: usize,
    step: f64,
    verbose: bool,
) -> Result<(Point, usize, usize)> {
    let m = p.n_cons();
    let mut evals = 0;
    let mut damping: Option<f64> = None;
    let mut iter = 0;
    while iter < max_iter {
        let sq: f64 = cur.c.iter().map(|v| v * v).sum();
        if inf_norm(&cur.c) <= tol {
            break;
        }
        let jac = constraint_jacobian(p, &cur.x, step)?;
        evals += 2 * p.n_vars();
        let jjt = &jac * jac.transpose();
        let mu = damping.get_or_insert(1e-6 * jjt.diagonal().amax().max(1e-12));
        let c = DVector::from_column_slice(&cur.c);
        let mut accepted = None;
        for _ in 0..40 {
            let mut a = jjt.clone();
            for i in 0..m {
                a[(i, i)] += *mu;
            }
            if let Some(ch) = a.cholesky() {
                let d = -(jac.transpose() * ch.solve(&c));
                let mut x = cur.x.clone();
                for (xi, di) in x.iter_mut().zip(d.iter()) {
                    *xi += di;
                }
                clip(&mut x);
                evals += 1;
                if let Some(pt) = Point::eval(p, x) {
                    let sq_new: f64 = pt.c.iter().map(|v| v * v).sum();
                    if sq_new < (1.0 - 1e-4) * sq {
                        accepted = Some(pt);
                        *mu = (*mu / 5.0).max(1e-300);
                        break;
                    }
                }
            }
            *mu *= 4.0;
        }
        let Some(next) = accepted else { break };
        cur = next;
        iter += 1;
        if verbose {
            eprintln!("restore {iter:4}  |c| {:.3e}  mu {:.2e}", inf_norm(&cur.c), damping.unwrap_or(0.0));
        }
    }
    Ok((cur, iter, evals))
}

/// Runs the SQP method from `x0` (clipped into the bounds).
pub fn solve<P: NlpProblem + ?Sized>(p: &P, x0: &[f64], opts: &SolverOptions) -> Result<SolverResult> {
    solve_with_log(p, x0, opts, None)
}

/// As [`solve`], writing one whitespace-separated line per major iteration
/// to `log`: `iter merit constraint_norm stationarity_norm step_length`.
pub fn solve_with_log<P: NlpProblem + ?Sized>(
    p: &P,
    x0: &[f64],
    opts: &SolverOptions,
    mut log: Option<&mut dyn Write>,
) -> Result<SolverResult> {
    opts.validate()?;
    let n = p.n_vars();
    let m = p.n_cons();
    if x0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x0.len(),
            context: "initial point",
        });
    }
    if m > n {
        return Err(Error::Dimension {
            expected: n,
            got: m,
            context: "more constraints than variables",
        });
    }
    let lower = p.lower_bounds();
    let upper = p.upper_bounds();
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return Err(Error::param("bounds", "lower bound exceeds upper bound"));
    }
    let clip = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let step = opts.fd_step;
    let mut evals = 1usize;
    let mut x_init = x0.to_vec();
    clip(&mut x_init);

    let failure = |x: Vec<f64>, iterations, evals, msg: String| SolverResult {
        multipliers: vec![0.0; m],
        objective: f64::NAN,
        constraint_norm: f64::NAN,
        stationarity_norm: f64::NAN,
        x,
        status: SolverStatus::NumericalFailure,
        iterations,
        restoration_iterations: 0,
        function_evaluations: evals,
        message: msg,
    };

    let Some(mut cur) = Point::eval(p, x_init.clone()) else {
        return Ok(failure(x_init, 0, evals, "non-finite function values at the initial point".into()));
    };
    let mut restoration_iterations = 0;
    if opts.restore_feasibility {
        match restore(p, cur, &clip, opts.tol_constraint, opts.max_major_iterations, step, opts.verbosity > 0) {
            Ok((pt, it, ev)) => {
                cur = pt;
                restoration_iterations = it;
                evals += ev;
            }
            Err(e) => return Ok(failure(x_init, 0, evals, e.to_string())),
        }
    }
    let derivs = |x: &[f64]| -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((objective_gradient(p, x, step)?, constraint_jacobian(p, x, step)?))
    };
    let (mut g, mut jac) = match derivs(&cur.x) {
        Ok(v) => v,
        Err(e) => return Ok(failure(cur.x, 0, evals, e.to_string())),
    };
    evals += 2 * n + 2 * n;

    let mut b = DMatrix::<f64>::identity(n, n);
    let mut rho = opts.penalty_initial;
    let mut last_step = 0.0;
    let mut message = String::from("iteration limit reached");
    let mut status = SolverStatus::MaxIter;
    let mut lam_ls = DVector::zeros(m);
    let mut cn = f64::NAN;
    let mut sn = f64::NAN;
    let mut iterations = 0;
    let mut bfgs_resets = 0;

    for iter in 0..=opts.max_major_iterations {
        iterations = iter;
        let at_bound = |i: usize, x: &[f64]| {
            (x[i] <= lower[i] + BOUND_EPS * lower[i].abs().max(1.0), x[i] >= upper[i] - BOUND_EPS * upper[i].abs().max(1.0))
        };
        let all_free = vec![true; n];
        lam_ls = least_squares_multipliers(&g, &jac, &all_free);
        let mut grad_l = &g + jac.tr_mul(&lam_ls);
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let (lo, hi) = at_bound(i, &cur.x);
                !((lo && grad_l[i] > 0.0) || (hi && grad_l[i] < 0.0))
            })
            .collect();
        if free.iter().any(|f| !f) {
            lam_ls = least_squares_multipliers(&g, &jac, &free);
            grad_l = &g + jac.tr_mul(&lam_ls);
        }
        project_gradient(&mut grad_l, &cur.x, &lower, &upper);
        cn = inf_norm(&cur.c);
        sn = inf_norm(grad_l.as_slice());

        if let Some(w) = log.as_deref_mut() {
            let _ = writeln!(w, "{iter:5} {:.12e} {cn:.6e} {sn:.6e} {last_step:.6e}", cur.merit(rho));
        }
        if opts.verbosity > 0 {
            eprintln!(
                "sqp {iter:4}  f {:+.10e}  |c| {cn:.3e}  |gL| {sn:.3e}  step {last_step:.3e}  rho {rho:.2e}",
                cur.f
            );
        }
        if cn <= opts.tol_constraint && sn <= opts.tol_stationarity {
            status = SolverStatus::Converged;
            message = "converged".into();
            break;
        }
        if iter == opts.max_major_iterations {
            break;
        }

        let exact = match p.lagrangian_hessian(&cur.x, lam_ls.as_slice(), step) {
            Some(Ok(h)) => Some(h),
            Some(Err(e)) => {
                status = SolverStatus::NumericalFailure;
                message = format!("hessian evaluation failed: {e}");
                break;
            }
            None => None,
        };
        // fix variables the step would push through their bound and re-solve
        let mut free = free;
        let mut qp;
        loop {
            qp = match &exact {
                Some(h) => convexified_step(h, &g, &jac, &cur.c, &free),
                None => solve_qp(&b, &g, &jac, &cur.c, &free),
            };
            let Some((d, _)) = &qp else { break };
            let blocked: Vec<usize> = (0..n)
                .filter(|&i| {
                    let (lo, hi) = at_bound(i, &cur.x);
                    free[i] && ((lo && d[i] < 0.0) || (hi && d[i] > 0.0))
                })
                .collect();
            if blocked.is_empty() || free.iter().filter(|&&f| f).count() <= blocked.len() + m {
                break;
            }
            for i in blocked {
                free[i] = false;
            }
        }
        let Some((mut d, lam_new)) = qp else {
            status = SolverStatus::NumericalFailure;
            message = "singular KKT system".into();
            break;
        };

        // largest step keeping the iterate inside the box
        let mut alpha_max: f64 = 1.0;
        for i in 0..n {
            if d[i] < 0.0 && lower[i].is_finite() {
                alpha_max = alpha_max.min(((lower[i] - cur.x[i]) / d[i]).max(0.0));
            } else if d[i] > 0.0 && upper[i].is_finite() {
                alpha_max = alpha_max.min(((upper[i] - cur.x[i]) / d[i]).max(0.0));
            }
        }
        if alpha_max <= 1e-12 {
            // pinned against a bound the multiplier test did not release; drop
            // those components and take the truncated direction
            for i in 0..n {
                let (lo, hi) = at_bound(i, &cur.x);
                if (lo && d[i] < 0.0) || (hi && d[i] > 0.0) {
                    d[i] = 0.0;
                }
            }
            alpha_max = 1.0;
        }

        // Powell's rule: follow the multipliers down as well as up
        let needed = opts.penalty_margin * lam_new.amax();
        rho = needed.max(0.5 * (rho + needed));
        let c_l1: f64 = cur.c.iter().map(|v| v.abs()).sum();
        let phi0 = cur.merit(rho);
        let mut dphi = g.dot(&d) - rho * c_l1;
        if dphi >= 0.0 {
            // can only happen with a non-convex model; fall back to a pure
            // feasibility direction
            dphi = -rho * c_l1 + g.dot(&d).min(0.0);
        }

        let trial = |x: &DVector<f64>| -> Vec<f64> {
            let mut v = x.as_slice().to_vec();
            clip(&mut v);
            v
        };
        let xcur = DVector::from_column_slice(&cur.x);
        let mut accepted: Option<(Point, f64)> = None;
        let mut alpha = alpha_max;
        for k in 0..=opts.max_backtracks {
            evals += 1;
            let cand = Point::eval(p, trial(&(&xcur + alpha * &d)));
            if let Some(pt) = &cand {
                if pt.merit(rho) <= phi0 + opts.armijo * alpha * dphi {
                    accepted = cand.map(|pt| (pt, alpha));
                    break;
                }
            }
            if k == 0 {
                // second-order correction for the full step
                if let Some(pt) = &cand {
                    if let Some(corr) = min_norm_correction(&jac, &pt.c, &free) {
                        evals += 1;
                        if let Some(pt2) = Point::eval(p, trial(&(&xcur + alpha * &d + corr))) {
                            if pt2.merit(rho) <= phi0 + opts.armijo * alpha * dphi {
                                accepted = Some((pt2, alpha));
                                break;
                            }
                        }
                    }
                }
            }
            alpha *= 0.5;
        }

        let Some((next, alpha)) = accepted else {
            if exact.is_none() && bfgs_resets < 3 {
                b = DMatrix::identity(n, n);
                bfgs_resets += 1;
                continue;
            }
            status = SolverStatus::NumericalFailure;
            message = "line search failed to reduce the merit function".into();
            break;
        };
        debug_assert!(next.merit(rho) <= phi0 + 1e-12 * phi0.abs().max(1.0));

        let (g_next, jac_next) = match derivs(&next.x) {
            Ok(v) => v,
            Err(e) => {
                status = SolverStatus::NumericalFailure;
                message = e.to_string();
                break;
            }
        };
        evals += 4 * n;
        if exact.is_none() {
            let s = DVector::from_column_slice(&next.x) - &xcur;
            let y = (&g_next + jac_next.tr_mul(&lam_new)) - (&g + jac.tr_mul(&lam_new));
            if iter == 0 && bfgs_resets == 0 {
                let sy = s.dot(&y);
                let yy = y.dot(&y);
                if sy > 0.0 && yy > 0.0 {
                    b = DMatrix::identity(n, n) * (yy / sy);
                }
            }
            bfgs_update(&mut b, &s, &y);
        }
        last_step = alpha * d.amax();
        cur = next;
        g = g_next;
        jac = jac_next;
    }

    Ok(SolverResult {
        objective: cur.f,
        x: cur.x,
        multipliers: lam_ls.as_slice().to_vec(),
        status,
        constraint_norm: cn,
        stationarity_norm: sn,
        iterations,
        restoration_iterations,
        function_evaluations: evals,
        message,
    })
}
