//! Limited-memory quasi-Newton minimization with outer-iteration hooks.

use std::collections::VecDeque;

use serde::Serialize;

/// A smooth objective whose frozen auxiliary state (nearest-point targets,
/// parameterization) may be updated between iterations.
pub trait Problem {
    /// Energy and gradient at `x`; the gradient is written into `grad`.
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&mut self, x: &[f64]) -> f64;

    /// Called at the start of each outer iteration. Returns whether the
    /// energy landscape changed, in which case cached values are discarded.
    fn refresh(&mut self, _x: &[f64]) -> bool {
        false
    }

    /// Rewrites `x` into an equivalent representative (same energy). Returns
    /// whether anything changed, which invalidates curvature history.
    fn canonicalize(&mut self, _x: &mut [f64]) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsSettings {
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    pub history: usize,
    /// Largest per-coordinate change allowed in the first trial step.
    pub max_step: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            max_iterations: 500,
            grad_tolerance: 1e-6,
            history: 10,
            max_step: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    /// No step along the steepest-descent direction decreased the energy.
    LineSearch,
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimizeReport {
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    /// Energy after each outer iteration, starting with the initial one.
    pub energies: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `problem` starting from `x` (updated in place).
pub fn minimize<P: Problem>(problem: &mut P, x: &mut [f64], settings: &LbfgsSettings) -> MinimizeReport {
    let n = x.len();
    let mut grad = vec![0.0; n];
    problem.refresh(x);
    let mut f = problem.value_and_gradient(x, &mut grad);
    let mut energies = vec![f];
    if !f.is_finite() {
        return MinimizeReport {
            iterations: 0,
            converged: false,
            stop: StopReason::NonFinite,
            energies,
        };
    }
    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rho_hist: VecDeque<f64> = VecDeque::new();
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut alpha = vec![0.0; settings.history];

    let mut iterations = 0;
    let stop = loop {
        if iterations > 0 {
            let mut changed = problem.canonicalize(x);
            if changed {
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
            }
            changed |= problem.refresh(x);
            if changed {
                f = problem.value_and_gradient(x, &mut grad);
                if !f.is_finite() {
                    break StopReason::NonFinite;
                }
            }
        }
        if norm(&grad) < settings.grad_tolerance {
            break StopReason::GradientTolerance;
        }
        if iterations >= settings.max_iterations {
            break StopReason::MaxIterations;
        }

        // Two-loop recursion.
        dir.copy_from_slice(&grad);
        let k = s_hist.len();
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alpha[i] * y;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alpha[i] - beta) * s;
            }
        }
        dir.iter_mut().for_each(|d| *d = -*d);

        let mut slope = dot(&dir, &grad);
        if slope.is_nan() || slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
            slope = dot(&dir, &grad);
        }

        let step = match line_search(problem, x, f, slope, &dir, settings.max_step, &mut trial, &mut trial_grad) {
            Some(v) => v,
            None if !s_hist.is_empty() => {
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                for (d, g) in dir.iter_mut().zip(&grad) {
                    *d = -g;
                }
                slope = dot(&dir, &grad);
                match line_search(problem, x, f, slope, &dir, settings.max_step, &mut trial, &mut trial_grad) {
                    Some(v) => v,
                    None => break StopReason::LineSearch,
                }
            }
            None => break StopReason::LineSearch,
        };
        if !step.is_finite() {
            break StopReason::NonFinite;
        }

        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 {
            if s_hist.len() == settings.history {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
        }
        x.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        f = step;
        energies.push(f);
        iterations += 1;
    };

    MinimizeReport {
        iterations,
        converged: stop == StopReason::GradientTolerance,
        stop,
        energies,
    }
}

/// Backtracking Armijo search; on success `trial` and `trial_grad` hold the
/// accepted point and its gradient and the accepted energy is returned.
#[allow(clippy::too_many_arguments)]
fn line_search<P: Problem>(
    problem: &mut P,
    x: &[f64],
    f: f64,
    slope: f64,
    dir: &[f64],
    max_step: f64,
    trial: &mut [f64],
    trial_grad: &mut [f64],
) -> Option<f64> {
    if slope.is_nan() || slope >= 0.0 {
        return None;
    }
    let largest = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut t = if largest > max_step { max_step / largest } else { 1.0 };
    for _ in 0..MAX_BACKTRACKS {
        for ((out, xi), di) in trial.iter_mut().zip(x).zip(dir) {
            *out = xi + t * di;
        }
        let ft = problem.value(trial);
        if ft.is_finite() && ft <= f + ARMIJO_C1 * t * slope && ft < f {
            return Some(problem.value_and_gradient(trial, trial_grad));
        }
        t *= 0.5;
    }
    None
}
