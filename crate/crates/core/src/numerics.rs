//! Numerical primitives shared by every fit and analysis in the crate:
//! stable log-sum-exp, Huber penalties, an L-BFGS minimizer with Armijo
//! backtracking, and central finite differences for gradient checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log(Σ exp(x_i))` evaluated with a max shift.
///
/// Entries may be `-inf` as long as at least one is finite.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::domain("log_sum_exp of an empty slice"));
    }
    if xs.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::domain("log_sum_exp arguments must be finite or -inf"));
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::domain("log_sum_exp with every argument -inf"));
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Log-sum-exp of three terms together with the softmax weights of each term,
/// which are the partial derivatives of the result.
///
/// Callers guarantee at least one finite argument and no NaN / +inf.
#[inline]
pub(crate) fn lse3_with_weights(x: [f64; 3]) -> (f64, [f64; 3]) {
    let max = x[0].max(x[1]).max(x[2]);
    let w = [(x[0] - max).exp(), (x[1] - max).exp(), (x[2] - max).exp()];
    let sum = w[0] + w[1] + w[2];
    (max + sum.ln(), [w[0] / sum, w[1] / sum, w[2] / sum])
}

/// Huber penalty with a validated threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Huber {
    delta: f64,
}

impl Huber {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::domain(format!(
                "huber delta must be positive and finite, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    pub fn loss(&self, r: f64) -> f64 {
        let abs = r.abs();
        if abs <= self.delta {
            0.5 * r * r
        } else {
            self.delta * (abs - 0.5 * self.delta)
        }
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        if r.abs() <= self.delta {
            r
        } else {
            self.delta * r.signum()
        }
    }
}

pub fn huber(r: f64, delta: f64) -> Result<f64> {
    Ok(Huber::new(delta)?.loss(r))
}

pub fn huber_derivative(r: f64, delta: f64) -> Result<f64> {
    Ok(Huber::new(delta)?.derivative(r))
}

/// Per-residual penalty used by the fitting objectives. `Squared` exists as a
/// non-robust control (`r²/2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Huber(Huber),
    Squared,
}

impl Penalty {
    #[inline]
    pub fn loss(&self, r: f64) -> f64 {
        match self {
            Penalty::Huber(h) => h.loss(r),
            Penalty::Squared => 0.5 * r * r,
        }
    }

    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            Penalty::Huber(h) => h.derivative(r),
            Penalty::Squared => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub max_iterations: usize,
    /// Stop once the max-norm of the gradient falls below this.
    pub gradient_tolerance: f64,
    /// Stop once a step moves no coordinate by more than this (relative to `1 + |x|`).
    pub step_tolerance: f64,
    pub history_size: usize,
    pub line_search_max_backtracks: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            gradient_tolerance: 1e-9,
            step_tolerance: 1e-12,
            history_size: 10,
            line_search_max_backtracks: 50,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.history_size == 0 || self.line_search_max_backtracks == 0
        {
            return Err(Error::domain("optimizer counts must be at least 1"));
        }
        if !(self.gradient_tolerance >= 0.0) || !(self.step_tolerance >= 0.0) {
            return Err(Error::domain("optimizer tolerances must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GradientTol,
    StepTol,
    MaxIter,
    LineSearchFail,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination_reason: TerminationReason,
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK_FACTOR: f64 = 0.5;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct History {
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    cap: usize,
}

impl History {
    fn new(cap: usize) -> Self {
        Self {
            pairs: std::collections::VecDeque::with_capacity(cap),
            cap,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, rho: f64) {
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, rho));
    }

    /// Two-loop recursion: returns `-H·g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let scale = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= scale);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|qi| *qi = -*qi);
        q
    }
}

/// Steepest-descent direction scaled so no coordinate moves more than one unit
/// on the first trial step.
fn scaled_descent(g: &[f64]) -> Vec<f64> {
    let scale = 1.0 / max_norm(g).max(1.0);
    g.iter().map(|gi| -gi * scale).collect()
}

/// L-BFGS with backtracking Armijo line search.
///
/// The returned value never exceeds `objective(start)`. Non-finite trial
/// values are treated as failed sufficient-decrease checks and backtracked.
pub fn minimize<F, G>(
    objective: F,
    gradient: G,
    start: &[f64],
    options: &OptimizerOptions,
) -> MinimizeResult
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = start.to_vec();
    let mut f = objective(&x);
    let mut g = gradient(&x);
    let finish = |x: Vec<f64>, f: f64, g: &[f64], iterations: usize, reason: TerminationReason| {
        MinimizeResult {
            point: x,
            value: f,
            gradient_norm: max_norm(g),
            iterations,
            converged: matches!(reason, TerminationReason::GradientTol | TerminationReason::StepTol),
            termination_reason: reason,
        }
    };
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        let gradient_norm = if g.iter().all(|v| v.is_finite()) { max_norm(&g) } else { f64::INFINITY };
        return MinimizeResult {
            point: x,
            value: f,
            gradient_norm,
            iterations: 0,
            converged: false,
            termination_reason: TerminationReason::NonFinite,
        };
    }

    let mut history = History::new(options.history_size);
    for iter in 0..options.max_iterations {
        if max_norm(&g) <= options.gradient_tolerance {
            return finish(x, f, &g, iter, TerminationReason::GradientTol);
        }

        let mut direction = if history.pairs.is_empty() {
            scaled_descent(&g)
        } else {
            history.direction(&g)
        };
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            history.pairs.clear();
            direction = scaled_descent(&g);
            slope = dot(&g, &direction);
        }

        let mut accepted = None;
        let mut saw_non_finite = false;
        // One retry along steepest descent if the quasi-Newton direction fails.
        for attempt in 0..2 {
            let mut step = 1.0;
            for _ in 0..options.line_search_max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
                let f_trial = objective(&trial);
                if !f_trial.is_finite() {
                    saw_non_finite = true;
                } else if f_trial <= f + ARMIJO_C1 * step * slope {
                    accepted = Some((trial, f_trial));
                    break;
                }
                step *= BACKTRACK_FACTOR;
            }
            if accepted.is_some() || attempt == 1 || history.pairs.is_empty() {
                break;
            }
            history.pairs.clear();
            direction = scaled_descent(&g);
            slope = dot(&g, &direction);
        }

        let Some((x_new, f_new)) = accepted else {
            let reason = if saw_non_finite {
                TerminationReason::NonFinite
            } else {
                TerminationReason::LineSearchFail
            };
            return finish(x, f, &g, iter, reason);
        };

        let g_new = gradient(&x_new);
        if g_new.iter().any(|v| !v.is_finite()) {
            return finish(x, f, &g, iter, TerminationReason::NonFinite);
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let step_small = s
            .iter()
            .zip(&x)
            .all(|(si, xi)| si.abs() <= options.step_tolerance * (1.0 + xi.abs()));
        if sy > f64::EPSILON * dot(&y, &y) {
            history.push(s, y, 1.0 / sy);
        }

        x = x_new;
        f = f_new;
        g = g_new;
        if step_small {
            return finish(x, f, &g, iter + 1, TerminationReason::StepTol);
        }
    }
    let reason = if max_norm(&g) <= options.gradient_tolerance {
        TerminationReason::GradientTol
    } else {
        TerminationReason::MaxIter
    };
    finish(x, f, &g, options.max_iterations, reason)
}

/// Central-difference gradient: `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_diff_gradient<F>(objective: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let grad = (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = objective(&probe);
            probe[i] = x[i] - h;
            let down = objective(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect();
    Ok(grad)
}
