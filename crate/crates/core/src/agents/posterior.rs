//! Conjugate posterior over tabular models (Dirichlet transitions,
//! Beta-Bernoulli rewards) and the two agents sampling from it.

use ndarray::{Array2, Array3};
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{gap_min_of, uniform, Agent, AgentError, ResolveSchedule, Transition, VisitCounts};
use crate::bounds::{u_form, Allocation, BoundInputs, KChoice};
use crate::dp::policy_iteration;
use crate::env::sample_dirichlet;
use crate::mdp::TabularMdp;
use crate::quantities::compute_instance_quantities;
use crate::solver::{minimize_with_navigation, NavigationProjector, StepSchedule};
use crate::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prior {
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Self {
            rho: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl Prior {
    fn validate(&self) -> Result<(), AgentError> {
        if self.rho > 0.0 && self.alpha > 0.0 && self.beta > 0.0 {
            Ok(())
        } else {
            Err(AgentError::Config(format!(
                "prior parameters must be positive, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    /// Dirichlet concentration `rho[[s, a, s']]`.
    pub rho: Array3<f64>,
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    /// Cumulative reward `R(s, a)`.
    pub reward_sum: Array2<f64>,
    pub prior: Prior,
    pub visits: VisitCounts,
    discount: f64,
}

impl PosteriorState {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        prior: Prior,
        discount: f64,
    ) -> Result<Self, AgentError> {
        prior.validate()?;
        Ok(Self {
            rho: Array3::from_elem((n_states, n_actions, n_states), prior.rho),
            alpha: Array2::from_elem((n_states, n_actions), prior.alpha),
            beta: Array2::from_elem((n_states, n_actions), prior.beta),
            reward_sum: Array2::zeros((n_states, n_actions)),
            prior,
            visits: VisitCounts::new(n_states, n_actions),
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.alpha.ncols()
    }

    /// `rho += 1` at the observed next state, `alpha = alpha0 + R`,
    /// `beta = beta0 + N - R`.
    pub fn update(&mut self, tr: &Transition) {
        let (s, a) = (tr.state, tr.action);
        self.visits.record(s, a);
        self.rho[[s, a, tr.next_state]] += 1.0;
        self.reward_sum[[s, a]] += tr.reward;
        let n = self.visits.pair(s, a) as f64;
        self.alpha[[s, a]] = self.prior.alpha + self.reward_sum[[s, a]];
        self.beta[[s, a]] = self.prior.beta + n - self.reward_sum[[s, a]];
    }

    pub fn mean_reward(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.alpha.dim(), |(s, a)| {
            self.alpha[[s, a]] / (self.alpha[[s, a]] + self.beta[[s, a]])
        })
    }

    fn model(
        &self,
        transition: Array3<f64>,
        reward: &Array2<f64>,
    ) -> Result<TabularMdp, AgentError> {
        let (ns, na) = reward.dim();
        let reward_mean = Array3::from_shape_fn((ns, na, ns), |(s, a, _)| reward[[s, a]]);
        Ok(TabularMdp::with_start_state(
            transition,
            reward_mean,
            self.discount,
        )?)
    }

    pub fn mean_mdp(&self) -> Result<TabularMdp, AgentError> {
        let (ns, na) = (self.n_states(), self.n_actions());
        let transition = Array3::from_shape_fn((ns, na, ns), |(s, a, sp)| {
            let row = self.rho.slice(ndarray::s![s, a, ..]);
            self.rho[[s, a, sp]] / row.sum()
        });
        self.model(transition, &self.mean_reward())
    }

    /// Row-wise Dirichlet kernel; reward means either drawn from the Beta
    /// posterior or set to its mean. Draw order is every transition row, then
    /// every reward.
    pub fn sample_mdp(
        &self,
        sample_rewards: bool,
        rng: &mut Stream,
    ) -> Result<TabularMdp, AgentError> {
        let (ns, na) = (self.n_states(), self.n_actions());
        let mut transition = Array3::zeros((ns, na, ns));
        for s in 0..ns {
            for a in 0..na {
                let conc: Vec<f64> = self.rho.slice(ndarray::s![s, a, ..]).to_vec();
                let row = sample_dirichlet(&conc, rng);
                transition
                    .slice_mut(ndarray::s![s, a, ..])
                    .assign(&ndarray::Array1::from(row));
            }
        }
        let reward = if sample_rewards {
            let mut r = Array2::zeros((ns, na));
            for s in 0..ns {
                for a in 0..na {
                    let dist = Beta::new(self.alpha[[s, a]], self.beta[[s, a]])
                        .expect("positive beta parameters");
                    r[[s, a]] = dist.sample(rng);
                }
            }
            r
        } else {
            self.mean_reward()
        };
        self.model(transition, &reward)
    }

    fn mean_greedy(&self) -> Result<Vec<usize>, AgentError> {
        Ok(policy_iteration(&self.mean_mdp()?)?.greedy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsMdpNasConfig {
    pub k: usize,
    pub lambda: f64,
    pub prior: Prior,
    pub resolve: ResolveSchedule,
    pub solver_iters: usize,
    pub projection_tol: f64,
    pub projection_max_iter: usize,
}

impl Default for PsMdpNasConfig {
    fn default() -> Self {
        Self {
            k: 1,
            lambda: 0.1,
            prior: Prior::default(),
            resolve: ResolveSchedule::default(),
            solver_iters: 500,
            projection_tol: 1e-9,
            projection_max_iter: 20_000,
        }
    }
}

/// Posterior sampling of a model, then tracking of the navigation-constrained
/// minimizer of `U` on the sampled model.
pub struct PsMdpNas {
    config: PsMdpNasConfig,
    posterior: PosteriorState,
    allocation: Option<Allocation>,
    next_solve: u64,
    last_gap_min: f64,
}

impl PsMdpNas {
    pub fn new(
        config: PsMdpNasConfig,
        n_states: usize,
        n_actions: usize,
        discount: f64,
    ) -> Result<Self, AgentError> {
        if config.k == 0 {
            return Err(AgentError::Config(
                "moment order k must be at least 1".into(),
            ));
        }
        Ok(Self {
            posterior: PosteriorState::new(n_states, n_actions, config.prior, discount)?,
            config,
            allocation: None,
            next_solve: 0,
            last_gap_min: f64::NAN,
        })
    }

    pub fn posterior(&self) -> &PosteriorState {
        &self.posterior
    }

    fn solve(&mut self, rng: &mut Stream) -> Result<Allocation, AgentError> {
        let sampled = self.posterior.sample_mdp(false, rng)?;
        let sol = policy_iteration(&sampled)?;
        let q = compute_instance_quantities(&sampled, &sol, self.config.k)?;
        self.last_gap_min = q.gap_min;
        let inputs = BoundInputs::from_quantities(
            &q,
            sampled.discount(),
            self.config.lambda,
            KChoice::Fixed(self.config.k),
        )?;
        let form = u_form(&inputs)?;
        let projector = NavigationProjector::new(
            sampled.transition(),
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

impl Agent for PsMdpNas {
    fn action_distribution(
        &mut self,
        state: usize,
        t: u64,
        rng: &mut Stream,
    ) -> Result<Vec<f64>, AgentError> {
        if t >= self.next_solve {
            self.allocation = match self.solve(rng) {
                Ok(a) => Some(a),
                Err(e) => {
                    log::warn!("ps-mdp-nas allocation failed at t={t}, acting uniformly: {e}");
                    None
                }
            };
            self.next_solve = t + self.config.resolve.period(t);
        }
        Ok(match &self.allocation {
            Some(a) => a.state_policy(state),
            None => uniform(self.posterior.n_actions()),
        })
    }

    fn observe(&mut self, tr: &Transition, _rng: &mut Stream) {
        self.posterior.update(tr);
    }

    fn greedy_policy(&self) -> Result<Vec<usize>, AgentError> {
        self.posterior.mean_greedy()
    }

    fn delta_min_estimate(&self) -> f64 {
        self.last_gap_min
    }

    fn visits(&self) -> &VisitCounts {
        &self.posterior.visits
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsrlConfig {
    pub prior: Prior,
    /// Steps between posterior draws; `ceil(1 / (1 - gamma))` when unset.
    pub resample_period: Option<u64>,
}

/// `ceil(1 / (1 - gamma))`, robust to the rounding of `1 / (1 - 0.99)`.
pub fn psrl_period(discount: f64) -> u64 {
    ((1.0 / (1.0 - discount)) - 1e-9).ceil().max(1.0) as u64
}

/// Posterior sampling for reinforcement learning: act greedily in a model
/// drawn from the posterior, redrawn on a fixed cadence.
pub struct Psrl {
    posterior: PosteriorState,
    period: u64,
    policy: Option<Vec<usize>>,
    next_sample: u64,
}

impl Psrl {
    pub fn new(
        config: PsrlConfig,
        n_states: usize,
        n_actions: usize,
        discount: f64,
    ) -> Result<Self, AgentError> {
        let period = config
            .resample_period
            .unwrap_or_else(|| psrl_period(discount));
        if period == 0 {
            return Err(AgentError::Config(
                "resample period must be at least 1".into(),
            ));
        }
        Ok(Self {
            posterior: PosteriorState::new(n_states, n_actions, config.prior, discount)?,
            period,
            policy: None,
            next_sample: 0,
        })
    }

    pub fn period(&self) -> u64 {
        self.period
    }
}

impl Agent for Psrl {
    fn action_distribution(
        &mut self,
        state: usize,
        t: u64,
        rng: &mut Stream,
    ) -> Result<Vec<f64>, AgentError> {
        if t >= self.next_sample || self.policy.is_none() {
            let sampled = self.posterior.sample_mdp(true, rng)?;
            self.policy = Some(policy_iteration(&sampled)?.greedy);
            self.next_sample = t + self.period;
        }
        let mut dist = vec![0.0; self.posterior.n_actions()];
        dist[self.policy.as_ref().expect("sampled above")[state]] = 1.0;
        Ok(dist)
    }

    fn observe(&mut self, tr: &Transition, _rng: &mut Stream) {
        self.posterior.update(tr);
    }

    fn greedy_policy(&self) -> Result<Vec<usize>, AgentError> {
        self.posterior.mean_greedy()
    }

    fn delta_min_estimate(&self) -> f64 {
        let Ok(mdp) = self.posterior.mean_mdp() else {
            return f64::NAN;
        };
        let Ok(sol) = policy_iteration(&mdp) else {
            return f64::NAN;
        };
        gap_min_of(&sol.q_star)
    }

    fn visits(&self) -> &VisitCounts {
        &self.posterior.visits
    }
}
