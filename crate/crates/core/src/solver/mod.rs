//! Minimization of bound surrogates over allocations.

mod navigation;
mod simplex;

use ndarray::Array2;
use thiserror::Error;

use crate::bounds::MinimaxForm;

pub use navigation::{minimize_with_navigation, project_navigation, NavigationProjector};
pub use simplex::{minimize_on_simplex, project_simplex};

pub const DEFAULT_SIMPLEX_ITERS: usize = 20_000;
pub const DEFAULT_NAVIGATION_ITERS: usize = 10_000;
pub const DEFAULT_PROJECTION_TOL: f64 = 1e-10;
pub const DEFAULT_PROJECTION_MAX_ITER: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("objective is not finite at the starting point")]
    InfiniteStart,
    #[error("objective dimensions {objective:?} do not match {expected:?}")]
    Shape {
        objective: (usize, usize),
        expected: (usize, usize),
    },
    #[error("projection did not converge in {iterations} iterations (flow residual {flow:e}, step {step:e})")]
    ProjectionNotConverged {
        iterations: usize,
        flow: f64,
        step: f64,
    },
    #[error("flow constraint system is singular")]
    Singular,
}

/// A function of an allocation with a subgradient oracle.
pub trait Objective {
    fn dims(&self) -> (usize, usize);
    /// May return `f64::INFINITY` on the boundary.
    fn value(&self, w: &Array2<f64>) -> f64;
    /// `None` where the value is infinite.
    fn subgradient(&self, w: &Array2<f64>) -> Option<Array2<f64>>;
}

impl Objective for MinimaxForm {
    fn dims(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    fn value(&self, w: &Array2<f64>) -> f64 {
        MinimaxForm::value(self, w).unwrap_or(f64::INFINITY)
    }

    fn subgradient(&self, w: &Array2<f64>) -> Option<Array2<f64>> {
        MinimaxForm::subgradient(self, w)
    }
}

/// Step size `scale / sqrt(t)` applied to the raw subgradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// Scale chosen so the first step moves at most this much mass.
    Calibrated {
        first_move: f64,
    },
    Fixed {
        scale: f64,
    },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Calibrated { first_move: 0.1 }
    }
}

/// Output of a minimization: the best iterate and its objective trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimization {
    pub weights: Array2<f64>,
    pub value: f64,
    /// Best-so-far objective after each iteration.
    pub trace: Vec<f64>,
}

/// Entropic mirror step `w * exp(-eta * g)`, renormalized. The gradient is
/// shifted by its minimum first, which leaves the result unchanged but keeps
/// the exponentials in range.
fn mirror_step(w: &Array2<f64>, g: &Array2<f64>, eta: f64) -> Array2<f64> {
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    let mut next = Array2::zeros(w.dim());
    for ((n, &wi), &gi) in next.iter_mut().zip(w.iter()).zip(g.iter()) {
        *n = wi * (-eta * (gi - gmin)).exp();
    }
    let total = next.sum();
    next / total
}

fn total_variation(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    0.5 * a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}

/// Scale whose first mirror step moves `target` mass, found by bisection.
fn calibrate(w: &Array2<f64>, g: &Array2<f64>, target: f64) -> f64 {
    let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if gmax == 0.0 {
        return 0.0;
    }
    let mut hi = 1.0 / gmax;
    while total_variation(&mirror_step(w, g, hi), w) < target && hi < 1e12 / gmax {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if total_variation(&mirror_step(w, g, mid), w) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn step_scale(schedule: StepSchedule, w: &Array2<f64>, g: &Array2<f64>) -> f64 {
    match schedule {
        StepSchedule::Calibrated { first_move } => calibrate(w, g, first_move),
        StepSchedule::Fixed { scale } => scale,
    }
}
