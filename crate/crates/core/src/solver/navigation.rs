use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};

use super::simplex::project_simplex;
use super::{mirror_step, step_scale, Minimization, Objective, SolverError, StepSchedule};
use crate::bounds::{flow_residual, Allocation};
use crate::mdp::TabularMdp;

/// Euclidean projector onto the simplex intersected with the flow
/// constraints of a transition kernel. The affine part is factorized once.
#[derive(Debug, Clone)]
pub struct NavigationProjector {
    transition: Array3<f64>,
    /// Flow rows plus the all-ones row.
    constraints: DMatrix<f64>,
    /// `A^T (A A^T)^+`.
    correction: DMatrix<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl NavigationProjector {
    pub fn new(transition: &Array3<f64>, tol: f64, max_iter: usize) -> Result<Self, SolverError> {
        let (ns, na, _) = transition.dim();
        let n = ns * na;
        let mut a = DMatrix::<f64>::zeros(ns + 1, n);
        for sp in 0..ns {
            for ap in 0..na {
                let col = sp * na + ap;
                a[(sp, col)] += 1.0;
                for s in 0..ns {
                    a[(s, col)] -= transition[[sp, ap, s]];
                }
                a[(ns, col)] = 1.0;
            }
        }
        // The flow rows sum to zero, so A A^T is singular; use its pseudo-inverse.
        let gram = &a * a.transpose();
        let pinv = gram
            .pseudo_inverse(1e-12)
            .map_err(|_| SolverError::Singular)?;
        let correction = a.transpose() * pinv;
        Ok(Self {
            transition: transition.clone(),
            constraints: a,
            correction,
            tol,
            max_iter,
        })
    }

    pub fn for_mdp(mdp: &TabularMdp) -> Result<Self, SolverError> {
        Self::new(
            mdp.transition(),
            super::DEFAULT_PROJECTION_TOL,
            super::DEFAULT_PROJECTION_MAX_ITER,
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        let (ns, na, _) = self.transition.dim();
        (ns, na)
    }

    fn project_affine(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut residual = &self.constraints * x;
        let last = residual.len() - 1;
        residual[last] -= 1.0;
        x - &self.correction * residual
    }

    /// Dykstra's alternating projections between the affine flow set and the
    /// simplex. The affine set needs no correction term.
    pub fn project(&self, omega: &Array2<f64>) -> Result<Array2<f64>, SolverError> {
        let dims = self.dims();
        if omega.dim() != dims {
            return Err(SolverError::Shape {
                objective: omega.dim(),
                expected: dims,
            });
        }
        let n = dims.0 * dims.1;
        let mut x = DVector::from_iterator(n, omega.iter().copied());
        let mut q = DVector::<f64>::zeros(n);
        let mut flow = f64::INFINITY;
        let mut step = f64::INFINITY;
        for _ in 0..self.max_iter {
            let y = self.project_affine(&x);
            let shifted =
                Array2::from_shape_vec(dims, (&y + &q).iter().copied().collect()).expect("shape");
            let next = project_simplex(&shifted);
            let next = DVector::from_iterator(n, next.iter().copied());
            q += &y - &next;
            step = (&next - &x).amax();
            x = next;
            let w = to_array(&x, dims);
            flow = flow_residual(&w, &self.transition);
            if flow <= self.tol && step <= self.tol {
                return Ok(w);
            }
        }
        Err(SolverError::ProjectionNotConverged {
            iterations: self.max_iter,
            flow,
            step,
        })
    }
}

fn to_array(x: &DVector<f64>, dims: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(dims, x.iter().copied().collect()).expect("shape")
}

const KL_MAX_NEWTON: usize = 200;

impl NavigationProjector {
    /// Bregman (KL) projection onto the same set: the minimizer of
    /// `KL(w | omega)` subject to the flow constraints. The solution has the
    /// form `omega_i exp(-(B^T mu)_i)` up to normalization, where `B` is the
    /// flow matrix without its redundant first row, and `mu` minimizes the
    /// convex dual `log sum_i omega_i exp(-(B^T mu)_i)`; damped Newton finds it.
    ///
    /// Entries that are zero in `omega` stay zero, so positive inputs give
    /// positive outputs. This is the projection that matches the entropic
    /// mirror step. It fails to converge when no strictly positive feasible
    /// point exists on the support of `omega`.
    pub fn project_kl(&self, omega: &Array2<f64>) -> Result<Array2<f64>, SolverError> {
        let dims = self.dims();
        if omega.dim() != dims {
            return Err(SolverError::Shape {
                objective: omega.dim(),
                expected: dims,
            });
        }
        if omega.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || !(omega.sum() > 0.0) {
            return Err(SolverError::InfiniteStart);
        }
        let (ns, _) = dims;
        let n = omega.len();
        let log_x: Vec<f64> = omega.iter().map(|&w| w.ln()).collect();
        let b = self.constraints.rows(1, ns.saturating_sub(1)).into_owned();
        let m = b.nrows();

        // Dual value and primal point at `mu`.
        let primal = |mu: &DVector<f64>| -> (f64, DVector<f64>) {
            let shift = b.tr_mul(mu);
            let logits: Vec<f64> = (0..n).map(|i| log_x[i] - shift[i]).collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w = DVector::from_iterator(n, logits.iter().map(|&l| (l - top).exp()));
            let z = w.sum();
            (top + z.ln(), w / z)
        };

        let mut mu = DVector::<f64>::zeros(m);
        let (mut value, mut w) = primal(&mu);
        let mut flow = f64::INFINITY;
        let mut step = f64::INFINITY;
        for _ in 0..KL_MAX_NEWTON {
            flow = flow_residual(&to_array(&w, dims), &self.transition);
            if flow <= self.tol || m == 0 {
                return Ok(to_array(&w, dims));
            }
            // Gradient of the dual is -B w; its Hessian is the covariance of
            // the rows of B under w.
            let bw = &b * &w;
            let mut hessian =
                &b * DMatrix::from_diagonal(&w) * b.transpose() - &bw * bw.transpose();
            let ridge = 1e-14 * hessian.trace().max(f64::MIN_POSITIVE);
            for i in 0..m {
                hessian[(i, i)] += ridge;
            }
            let Some(direction) = hessian.lu().solve(&bw) else {
                return Err(SolverError::Singular);
            };
            // Armijo backtracking on the dual; the directional derivative is
            // -bw . direction. Near the optimum the dual is flat to rounding,
            // so a step that halves the constraint violation is accepted too.
            let slope = -bw.dot(&direction);
            let violation = bw.amax();
            let mut t = 1.0;
            loop {
                let trial = &mu + t * &direction;
                let (v, wt) = primal(&trial);
                if v <= value + 0.25 * t * slope
                    || (&b * &wt).amax() <= 0.5 * violation
                    || t < 1e-12
                {
                    step = (t * &direction).amax();
                    mu = trial;
                    value = v;
                    w = wt;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(SolverError::ProjectionNotConverged {
            iterations: KL_MAX_NEWTON,
            flow,
            step,
        })
    }
}

/// Projects `omega` onto the navigation-feasible allocations of `mdp`.
pub fn project_navigation(
    omega: &Allocation,
    mdp: &TabularMdp,
    tol: f64,
    max_iter: usize,
) -> Result<Allocation, SolverError> {
    let projector = NavigationProjector::new(mdp.transition(), tol, max_iter)?;
    Ok(Allocation {
        weights: projector.project(&omega.weights)?,
        navigation_feasible: true,
    })
}

/// Largest ratio `exp(MAX_LOG_MOVE)` by which one step may change the relative
/// weight of two pairs. The bounds' gradients grow like `1 / w^2`, so an
/// uncapped `c / sqrt(t)` step late in the run can zero out every pair but one.
const MAX_LOG_MOVE: f64 = 5.0;

fn capped_step(g: &Array2<f64>, eta: f64) -> f64 {
    let (lo, hi) = g
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    if range > 0.0 {
        eta.min(MAX_LOG_MOVE / range)
    } else {
        eta
    }
}

/// Mirror descent over navigation-feasible allocations: an entropic mirror
/// step followed by the KL projection onto the flow constraints, starting
/// from the KL projection of the uniform allocation. Iterates stay strictly
/// positive, so the bound stays finite along the way. (A Euclidean
/// projection after a multiplicative step lands on the boundary, where the
/// bounds are infinite.)
pub fn minimize_with_navigation(
    objective: &dyn Objective,
    projector: &NavigationProjector,
    iters: usize,
    schedule: StepSchedule,
) -> Result<Minimization, SolverError> {
    let dims = projector.dims();
    if objective.dims() != dims {
        return Err(SolverError::Shape {
            objective: objective.dims(),
            expected: dims,
        });
    }
    let uniform = Array2::from_elem(dims, 1.0 / (dims.0 * dims.1) as f64);
    let anchor = projector.project_kl(&uniform)?;
    let mut best_value = objective.value(&anchor);
    if !best_value.is_finite() {
        return Err(SolverError::InfiniteStart);
    }
    let mut best = anchor.clone();
    let mut x = anchor.clone();
    let mut trace = Vec::with_capacity(iters);
    let mut scale = None;
    for t in 1..=iters {
        let Some(g) = objective.subgradient(&x) else {
            break;
        };
        let c = *scale.get_or_insert_with(|| step_scale(schedule, &x, &g));
        let mut next =
            projector.project_kl(&mirror_step(&x, &g, capped_step(&g, c / (t as f64).sqrt())))?;
        let mut v = objective.value(&next);
        let mut pulls = 0;
        while !v.is_finite() && pulls < 64 {
            next = 0.5 * (&next + &anchor);
            v = objective.value(&next);
            pulls += 1;
        }
        if !v.is_finite() {
            break;
        }
        x = next;
        if v < best_value {
            best_value = v;
            best.assign(&x);
        }
        trace.push(best_value);
    }
    Ok(Minimization {
        weights: best,
        value: best_value,
        trace,
    })
}
