//! Model-based allocation tracking with forced exploration: Q and M learned
//! by stochastic approximation, flow constraints from the smoothed empirical
//! kernel.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{
    gap_min_of, two_timescale_update, uniform, Agent, AgentError, ForcedExploration,
    ResolveSchedule, Transition, VisitCounts,
};
use crate::bounds::{u_form, Allocation, BoundInputs};
use crate::dp::argmax;
use crate::solver::{minimize_with_navigation, NavigationProjector, StepSchedule};
use crate::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OBpiConfig {
    pub k: usize,
    pub lambda: f64,
    /// Exponent of the forced exploration `1 / N(s)^alpha`.
    pub alpha_exp: f64,
    pub resolve: ResolveSchedule,
    pub solver_iters: usize,
    pub projection_tol: f64,
    pub projection_max_iter: usize,
}

impl Default for OBpiConfig {
    fn default() -> Self {
        Self {
            k: 1,
            lambda: 0.1,
            alpha_exp: 0.5,
            resolve: ResolveSchedule::default(),
            solver_iters: 500,
            projection_tol: 1e-9,
            projection_max_iter: 20_000,
        }
    }
}

pub struct OBpi {
    config: OBpiConfig,
    discount: f64,
    q: Array2<f64>,
    m: Array2<f64>,
    next_counts: Array3<u64>,
    visits: VisitCounts,
    exploration: ForcedExploration,
    allocation: Option<Allocation>,
    next_solve: u64,
}

impl OBpi {
    pub fn new(
        config: OBpiConfig,
        n_states: usize,
        n_actions: usize,
        discount: f64,
    ) -> Result<Self, AgentError> {
        if config.k == 0 {
            return Err(AgentError::Config(
                "moment order k must be at least 1".into(),
            ));
        }
        let exploration = ForcedExploration::Power {
            alpha: config.alpha_exp,
        };
        exploration.validate()?;
        let h = 1.0 / (1.0 - discount);
        Ok(Self {
            q: Array2::from_elem((n_states, n_actions), h),
            m: Array2::from_elem((n_states, n_actions), h.powf(2f64.powi(config.k as i32))),
            next_counts: Array3::zeros((n_states, n_actions, n_states)),
            visits: VisitCounts::new(n_states, n_actions),
            exploration,
            allocation: None,
            next_solve: 0,
            config,
            discount,
        })
    }

    /// Maximum-likelihood kernel with one pseudo-count per next state.
    pub fn estimated_transition(&self) -> Array3<f64> {
        let (ns, na, _) = self.next_counts.dim();
        Array3::from_shape_fn((ns, na, ns), |(s, a, sp)| {
            (self.next_counts[[s, a, sp]] + 1) as f64 / (self.visits.pair(s, a) + ns as u64) as f64
        })
    }

    pub fn allocation(&self) -> Option<&Allocation> {
        self.allocation.as_ref()
    }

    fn solve(&self) -> Result<Allocation, AgentError> {
        let inputs = BoundInputs::from_estimates(
            &self.q,
            &self.m,
            self.config.k,
            self.discount,
            self.config.lambda,
        )?;
        let form = u_form(&inputs)?;
        let projector = NavigationProjector::new(
            &self.estimated_transition(),
            self.config.projection_tol,
            self.config.projection_max_iter,
        )?;
        let out = minimize_with_navigation(
            &form,
            &projector,
            self.config.solver_iters,
            StepSchedule::default(),
        )?;
        Ok(Allocation {
            weights: out.weights,
            navigation_feasible: true,
        })
    }
}

impl Agent for OBpi {
    fn action_distribution(
        &mut self,
        state: usize,
        t: u64,
        _rng: &mut Stream,
    ) -> Result<Vec<f64>, AgentError> {
        if t >= self.next_solve {
            self.allocation = match self.solve() {
                Ok(a) => Some(a),
                Err(e) => {
                    log::warn!("o-bpi allocation failed at t={t}, acting uniformly: {e}");
                    None
                }
            };
            self.next_solve = t + self.config.resolve.period(t);
        }
        let dist = match &self.allocation {
            Some(a) => a.state_policy(state),
            None => uniform(self.q.ncols()),
        };
        Ok(self.exploration.mix(dist, self.visits.state(state) + 1))
    }

    fn observe(&mut self, tr: &Transition, _rng: &mut Stream) {
        self.visits.record(tr.state, tr.action);
        self.next_counts[[tr.state, tr.action, tr.next_state]] += 1;
        let n = self.visits.pair(tr.state, tr.action);
        two_timescale_update(
            &mut self.q.view_mut(),
            &mut self.m.view_mut(),
            n,
            tr,
            self.discount,
            self.config.k,
        );
    }

    fn greedy_policy(&self) -> Result<Vec<usize>, AgentError> {
        Ok(self
            .q
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect())
    }

    fn delta_min_estimate(&self) -> f64 {
        gap_min_of(&self.q)
    }

    fn visits(&self) -> &VisitCounts {
        &self.visits
    }
}
