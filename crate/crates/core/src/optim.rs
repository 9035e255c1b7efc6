//! Limited-memory BFGS with Armijo backtracking.
//!
//! An iteration is one accepted parameter update. Objective evaluations spent
//! inside the line search are counted separately in [`IterationRecord`].

// Negated comparisons are deliberate: a NaN must take the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, inf_norm, norm2};

/// A smooth function together with its gradient.
pub trait Objective {
    fn dim(&self) -> usize;

    /// Returns `f(x)` and writes `∇f(x)` into `grad`.
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a closure `|x, grad| -> f(x)` into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

impl<O: Objective + ?Sized> Objective for &mut O {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).evaluate(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub history: usize,
    pub max_iterations: usize,
    /// Stop once the infinity norm of the gradient is at or below this.
    pub grad_tolerance: f64,
    /// When false, run exactly `max_iterations` accepted steps.
    pub check_convergence: bool,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            max_iterations: 10,
            grad_tolerance: 1e-5,
            check_convergence: true,
            c1: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            max_backtracks: 30,
        }
    }
}

impl LbfgsOptions {
    /// Fixed-iteration mode used for runtime measurements.
    pub fn benchmark(iterations: usize) -> Self {
        Self { max_iterations: iterations, check_convergence: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::InvalidOption("history must be at least 1"));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::InvalidOption("grad_tolerance must be positive"));
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(Error::InvalidOption("c1 must be in (0, 1)"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidOption("backtrack factor must be in (0, 1)"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidOption("initial_step must be positive"));
        }
        Ok(())
    }
}

/// Pairs with `s'y` at or below this multiple of `|s||y|` are discarded.
pub const CURVATURE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: f64,
}

/// Bounded history of curvature pairs, oldest first.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    capacity: usize,
    pairs: VecDeque<CurvaturePair>,
}

impl LbfgsState {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history capacity must be at least 1");
        Self { capacity, pairs: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn pairs(&self) -> impl DoubleEndedIterator<Item = &CurvaturePair> {
        self.pairs.iter()
    }

    /// Stores `(s, y)` if it passes the curvature test; evicts the oldest pair
    /// when full. Returns whether the pair was kept.
    pub fn push(&mut self, s: &[f64], y: &[f64]) -> bool {
        let sy = dot(s, y);
        if !(sy > CURVATURE_EPS * norm2(s) * norm2(y)) {
            return false;
        }
        let mut pair = if self.pairs.len() == self.capacity {
            self.pairs.pop_front().unwrap()
        } else {
            CurvaturePair { s: Vec::new(), y: Vec::new(), rho: 0.0 }
        };
        pair.s.clear();
        pair.s.extend_from_slice(s);
        pair.y.clear();
        pair.y.extend_from_slice(y);
        pair.rho = 1.0 / sy;
        self.pairs.push_back(pair);
        true
    }

    /// Initial inverse-Hessian scale `s'y / y'y` from the newest pair.
    pub fn gamma(&self) -> f64 {
        match self.pairs.back() {
            Some(p) => dot(&p.s, &p.y) / dot(&p.y, &p.y),
            None => 1.0,
        }
    }

    /// Writes `-H g` into `out` via the two-loop recursion.
    pub fn two_loop_direction(&self, g: &[f64], out: &mut [f64]) {
        assert_eq!(g.len(), out.len());
        out.copy_from_slice(g);
        let mut alphas = vec![0.0; self.pairs.len()];
        for (p, a) in self.pairs.iter().zip(alphas.iter_mut()).rev() {
            *a = p.rho * dot(&p.s, out);
            axpy(-*a, &p.y, out);
        }
        let gamma = self.gamma();
        for v in out.iter_mut() {
            *v *= gamma;
        }
        for (p, a) in self.pairs.iter().zip(&alphas) {
            let beta = p.rho * dot(&p.y, out);
            axpy(a - beta, &p.s, out);
        }
        for v in out.iter_mut() {
            *v = -*v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub step: f64,
    /// Objective value at the accepted point.
    pub value: f64,
    pub evaluations: usize,
}

/// Backtracks from `opts.initial_step` until the Armijo condition
/// `f(x + a d) <= f(x) + c1 a g'd` holds.
///
/// On success `x_trial` and `g_trial` hold the accepted point and its
/// gradient. Requires `g'd < 0`.
#[allow(clippy::too_many_arguments)]
pub fn backtracking_line_search<O: Objective + ?Sized>(
    f: &mut O,
    x: &[f64],
    fx: f64,
    g: &[f64],
    d: &[f64],
    opts: &LbfgsOptions,
    x_trial: &mut [f64],
    g_trial: &mut [f64],
) -> Result<LineSearchOutcome> {
    let slope = dot(g, d);
    if !(slope < 0.0) {
        return Err(Error::NotDescent { slope });
    }
    let mut step = opts.initial_step;
    for attempt in 0..=opts.max_backtracks {
        for ((xt, xi), di) in x_trial.iter_mut().zip(x).zip(d) {
            *xt = xi + step * di;
        }
        let value = f.evaluate(x_trial, g_trial);
        if value <= fx + opts.c1 * step * slope {
            return Ok(LineSearchOutcome { step, value, evaluations: attempt + 1 });
        }
        step *= opts.backtrack;
    }
    Err(Error::LineSearchFailure)
}

/// One accepted iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub step: f64,
    /// Objective evaluations spent in this iteration's line search.
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step satisfied Armijo; the result is the best iterate so far.
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    /// Total objective evaluations including the initial one.
    pub evaluations: usize,
}

pub fn lbfgs_minimize<O: Objective + ?Sized>(
    f: &mut O,
    x0: &[f64],
    opts: &LbfgsOptions,
) -> Result<LbfgsReport> {
    lbfgs_minimize_observed(f, x0, opts, |_| {})
}

/// Like [`lbfgs_minimize`], calling `observer` after every accepted iteration.
pub fn lbfgs_minimize_observed<O, C>(
    f: &mut O,
    x0: &[f64],
    opts: &LbfgsOptions,
    mut observer: C,
) -> Result<LbfgsReport>
where
    O: Objective + ?Sized,
    C: FnMut(&IterationRecord),
{
    opts.validate()?;
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::Shape("x0 length differs from objective dimension"));
    }

    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f.evaluate(&x, &mut g);
    let mut evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { iteration: 0 });
    }

    let mut state = LbfgsState::new(opts.history);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut trace = Vec::with_capacity(opts.max_iterations);
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=opts.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm == 0.0 || (opts.check_convergence && gnorm <= opts.grad_tolerance) {
            termination = Termination::Converged;
            break;
        }

        state.two_loop_direction(&g, &mut d);
        if !(dot(&g, &d) < 0.0) {
            state.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
        }

        let outcome =
            match backtracking_line_search(f, &x, fx, &g, &d, opts, &mut x_new, &mut g_new) {
                Ok(o) => o,
                Err(Error::LineSearchFailure) => {
                    evaluations += opts.max_backtracks + 1;
                    termination = Termination::LineSearchFailure;
                    break;
                }
                Err(e) => return Err(e),
            };
        evaluations += outcome.evaluations;
        if !outcome.value.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration });
        }

        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        state.push(&s, &y);
        core::mem::swap(&mut x, &mut x_new);
        core::mem::swap(&mut g, &mut g_new);
        fx = outcome.value;

        let record = IterationRecord {
            iteration,
            value: fx,
            grad_inf_norm: inf_norm(&g),
            step: outcome.step,
            evaluations: outcome.evaluations,
        };
        observer(&record);
        trace.push(record);
    }

    if termination == Termination::MaxIterations
        && opts.check_convergence
        && inf_norm(&g) <= opts.grad_tolerance
    {
        termination = Termination::Converged;
    }

    Ok(LbfgsReport { x, value: fx, gradient: g, trace, termination, evaluations })
}

/// Default finite-difference step for coordinate value `xi`.
pub fn default_step(xi: f64) -> f64 {
    1e-6 * (1.0 + xi.abs())
}

/// Largest per-coordinate relative error between the analytic gradient and a
/// central difference, with denominator `max(1, |analytic|)`.
pub fn check_gradient<O: Objective + ?Sized>(f: &mut O, x: &[f64]) -> f64 {
    check_gradient_with(f, x, default_step)
}

pub fn check_gradient_with<O, H>(f: &mut O, x: &[f64], step: H) -> f64
where
    O: Objective + ?Sized,
    H: Fn(f64) -> f64,
{
    let n = x.len();
    let mut analytic = vec![0.0; n];
    f.evaluate(x, &mut analytic);
    let mut probe = x.to_vec();
    let mut scratch = vec![0.0; n];
    let mut worst = 0.0f64;
    for i in 0..n {
        let h = step(x[i]);
        probe[i] = x[i] + h;
        let up = f.evaluate(&probe, &mut scratch);
        probe[i] = x[i] - h;
        let down = f.evaluate(&probe, &mut scratch);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (numeric - analytic[i]).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::SplitMix64;

    fn half_norm_sq(n: usize) -> FnObjective<impl FnMut(&[f64], &mut [f64]) -> f64> {
        FnObjective::new(n, |x: &[f64], g: &mut [f64]| {
            g.copy_from_slice(x);
            0.5 * dot(x, x)
        })
    }

    pub(crate) fn rosenbrock() -> FnObjective<impl FnMut(&[f64], &mut [f64]) -> f64> {
        FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            let t = b - a * a;
            g[0] = -400.0 * a * t - 2.0 * (1.0 - a);
            g[1] = 200.0 * t;
            100.0 * t * t + (1.0 - a) * (1.0 - a)
        })
    }

    #[test]
    fn empty_history_is_steepest_descent() {
        let state = LbfgsState::new(5);
        let mut d = [0.0; 2];
        state.two_loop_direction(&[3.0, -4.0], &mut d);
        assert_eq!(d, [-3.0, 4.0]);
    }

    #[test]
    fn identity_hessian_pair() {
        let mut state = LbfgsState::new(5);
        // For f = x'x/2, y == s.
        assert!(state.push(&[0.5, -1.0], &[0.5, -1.0]));
        assert_eq!(state.gamma(), 1.0);
        let mut d = [0.0; 2];
        state.two_loop_direction(&[2.0, 7.0], &mut d);
        assert!((d[0] + 2.0).abs() < 1e-15 && (d[1] + 7.0).abs() < 1e-15);
    }

    #[test]
    fn curvature_filter_and_capacity() {
        let mut state = LbfgsState::new(2);
        assert!(!state.push(&[1.0, 0.0], &[0.0, 1.0]));
        assert!(!state.push(&[1.0, 0.0], &[-1.0, 0.0]));
        assert!(state.push(&[1.0, 0.0], &[1.0, 0.0]));
        assert!(state.push(&[0.0, 1.0], &[0.0, 2.0]));
        assert!(state.push(&[1.0, 1.0], &[3.0, 3.0]));
        assert_eq!(state.len(), 2);
        assert_eq!(state.pairs().next().unwrap().s, [0.0, 1.0]);
    }

    #[test]
    fn armijo_accepts_unit_step_on_quadratic() {
        let mut f = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = x[0];
            0.5 * x[0] * x[0]
        });
        let (mut xt, mut gt) = ([0.0], [0.0]);
        let out = backtracking_line_search(
            &mut f, &[1.0], 0.5, &[1.0], &[-1.0], &LbfgsOptions::default(), &mut xt, &mut gt,
        )
        .unwrap();
        assert_eq!(out.step, 1.0);
        assert_eq!(out.value, 0.0);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn armijo_backtracks_twice_on_quartic() {
        let mut f = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 4.0 * x[0] * x[0] * x[0];
            x[0] * x[0] * x[0] * x[0]
        });
        let (mut xt, mut gt) = ([0.0], [0.0]);
        let out = backtracking_line_search(
            &mut f, &[1.0], 1.0, &[4.0], &[-4.0], &LbfgsOptions::default(), &mut xt, &mut gt,
        )
        .unwrap();
        assert_eq!(out.step, 0.25);
        assert_eq!(out.evaluations, 3);
        assert_eq!(xt, [0.0]);
    }

    #[test]
    fn ascent_direction_rejected() {
        let mut f = half_norm_sq(1);
        let (mut xt, mut gt) = ([0.0], [0.0]);
        let err = backtracking_line_search(
            &mut f, &[1.0], 0.5, &[1.0], &[1.0], &LbfgsOptions::default(), &mut xt, &mut gt,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotDescent { .. }));
    }

    #[test]
    fn line_search_failure_reported() {
        // Increasing along d everywhere despite the claimed gradient.
        let mut f = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 1.0;
            -x[0]
        });
        let (mut xt, mut gt) = ([0.0], [0.0]);
        let err = backtracking_line_search(
            &mut f, &[0.0], 0.0, &[1.0], &[-1.0], &LbfgsOptions::default(), &mut xt, &mut gt,
        )
        .unwrap_err();
        assert_eq!(err, Error::LineSearchFailure);
    }

    #[test]
    fn quadratic_in_one_iteration() {
        let mut f = half_norm_sq(2);
        let report = lbfgs_minimize(&mut f, &[5.0, -3.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(report.x, [0.0, 0.0]);
        assert_eq!(report.trace.len(), 1);
        assert_eq!(report.termination, Termination::Converged);
    }

    #[test]
    fn iteration_cap_respected() {
        let mut f = rosenbrock();
        let report = lbfgs_minimize(&mut f, &[-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(report.trace.len(), 10);
        assert_eq!(report.termination, Termination::MaxIterations);
        for w in report.trace.windows(2) {
            assert!(w[1].value < w[0].value);
        }
    }

    #[test]
    fn non_finite_start_aborts() {
        let mut f = FnObjective::new(1, |_: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        });
        let err = lbfgs_minimize(&mut f, &[0.0], &LbfgsOptions::default()).unwrap_err();
        assert_eq!(err, Error::NonFinite { iteration: 0 });
    }

    #[test]
    fn non_finite_gradient_reports_iteration() {
        let mut f = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = if x[0] < 0.5 { f64::INFINITY } else { x[0] };
            0.5 * x[0] * x[0]
        });
        let err = lbfgs_minimize(&mut f, &[1.0], &LbfgsOptions::default()).unwrap_err();
        assert_eq!(err, Error::NonFinite { iteration: 1 });
    }

    #[test]
    fn gradient_check_polynomial() {
        let mut f = FnObjective::new(3, |x: &[f64], g: &mut [f64]| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = 2.0 * xi;
            }
            dot(x, x)
        });
        assert!(check_gradient(&mut f, &[1.0, 2.0, 3.0]) < 1e-8);
    }

    #[test]
    fn gradient_check_catches_scaled_gradient() {
        let mut f = FnObjective::new(3, |x: &[f64], g: &mut [f64]| {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = 4.0 * xi;
            }
            dot(x, x)
        });
        let err = check_gradient(&mut f, &[1.0, 2.0, 3.0]);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn deterministic_trace() {
        let mut rng = SplitMix64::new(3);
        let x0 = [rng.next_f64() * 4.0 - 2.0, rng.next_f64() * 4.0 - 2.0];
        let opts = LbfgsOptions { max_iterations: 50, ..LbfgsOptions::default() };
        let a = lbfgs_minimize(&mut rosenbrock(), &x0, &opts).unwrap();
        let b = lbfgs_minimize(&mut rosenbrock(), &x0, &opts).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.x, b.x);
    }
}
