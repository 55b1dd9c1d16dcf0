//! Bootstrapped model-free agent: an ensemble of `(Q, M)` tables, one
//! quantile slice per step, and the closed-form allocation of the slice.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    two_timescale_update, uniform, Agent, AgentError, ForcedExploration, Transition, VisitCounts,
};
use crate::bounds::{closed_form_allocation, BoundInputs};
use crate::dp::argmax;
use crate::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfBpiConfig {
    pub ensemble_size: usize,
    pub update_prob: f64,
    pub k: usize,
    pub lambda: f64,
    pub exploration: ForcedExploration,
}

impl Default for MfBpiConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 50,
            update_prob: 0.7,
            k: 1,
            lambda: 0.1,
            exploration: ForcedExploration::Off,
        }
    }
}

/// `B` parallel value and moment tables with their update counters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTables {
    /// `q[[b, s, a]]`.
    pub q: Array3<f64>,
    /// `m[[b, s, a]]`, estimates of `M^k`.
    pub m: Array3<f64>,
    /// Per-member update counts `N_b(s, a)`.
    pub member_counts: Array3<u64>,
    pub k: usize,
    pub update_prob: f64,
    pub discount: f64,
    pub visits: VisitCounts,
}

impl EnsembleTables {
    /// Members drawn i.i.d. with `Q ~ U[0, 1/(1-gamma)]` and
    /// `M ~ U[0, 1/(1-gamma)^(2^k)]`, all Q entries first.
    pub fn new(
        ensemble_size: usize,
        n_states: usize,
        n_actions: usize,
        k: usize,
        update_prob: f64,
        discount: f64,
        rng: &mut Stream,
    ) -> Result<Self, AgentError> {
        if ensemble_size == 0 {
            return Err(AgentError::Config(
                "ensemble size must be at least 1".into(),
            ));
        }
        if k == 0 {
            return Err(AgentError::Config(
                "moment order k must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&update_prob) {
            return Err(AgentError::Config(format!(
                "update probability must be in [0, 1], got {update_prob}"
            )));
        }
        let shape = (ensemble_size, n_states, n_actions);
        let q_max = 1.0 / (1.0 - discount);
        let m_max = q_max.powf(2f64.powi(k as i32));
        let q = Array3::from_shape_simple_fn(shape, || rng.random::<f64>() * q_max);
        let m = Array3::from_shape_simple_fn(shape, || rng.random::<f64>() * m_max);
        Ok(Self {
            q,
            m,
            member_counts: Array3::zeros(shape),
            k,
            update_prob,
            discount,
            visits: VisitCounts::new(n_states, n_actions),
        })
    }

    pub fn ensemble_size(&self) -> usize {
        self.q.len_of(Axis(0))
    }

    pub fn n_states(&self) -> usize {
        self.q.len_of(Axis(1))
    }

    pub fn n_actions(&self) -> usize {
        self.q.len_of(Axis(2))
    }
}

/// Linear-interpolation quantile of sorted values at `xi` in `[0, 1]`.
fn quantile_sorted(sorted: &[f64], xi: f64) -> f64 {
    let pos = xi.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Per-pair `xi`-quantile across members of both tables.
pub fn quantile_sample(ensemble: &EnsembleTables, xi: f64) -> (Array2<f64>, Array2<f64>) {
    let (ns, na) = (ensemble.n_states(), ensemble.n_actions());
    let mut q_hat = Array2::zeros((ns, na));
    let mut m_hat = Array2::zeros((ns, na));
    let mut buf = Vec::with_capacity(ensemble.ensemble_size());
    for s in 0..ns {
        for a in 0..na {
            for (table, out) in [(&ensemble.q, &mut q_hat), (&ensemble.m, &mut m_hat)] {
                buf.clear();
                buf.extend(table.slice(ndarray::s![.., s, a]).iter().copied());
                buf.sort_by(f64::total_cmp);
                out[[s, a]] = quantile_sorted(&buf, xi);
            }
        }
    }
    (q_hat, m_hat)
}

/// Action distribution at `state` proportional to the closed-form allocation
/// of the sampled tables, together with the sampled minimum gap.
fn policy_and_gap(
    q_hat: &Array2<f64>,
    m_hat: &Array2<f64>,
    state: usize,
    lambda: f64,
    k: usize,
    discount: f64,
) -> Result<(Vec<f64>, f64), AgentError> {
    let inputs = BoundInputs::from_estimates(q_hat, m_hat, k, discount, lambda)?;
    let omega = closed_form_allocation(&inputs)?;
    Ok((omega.state_policy(state), inputs.gap_min))
}

pub fn mfbpi_policy(
    q_hat: &Array2<f64>,
    m_hat: &Array2<f64>,
    state: usize,
    lambda: f64,
    k: usize,
    discount: f64,
) -> Result<Vec<f64>, AgentError> {
    policy_and_gap(q_hat, m_hat, state, lambda, k, discount).map(|(p, _)| p)
}

/// Each member independently, with probability `p`, takes one two-timescale
/// step on the transition.
pub fn mfbpi_update(ensemble: &mut EnsembleTables, tr: &Transition, rng: &mut Stream) {
    ensemble.visits.record(tr.state, tr.action);
    for b in 0..ensemble.ensemble_size() {
        if rng.random::<f64>() >= ensemble.update_prob {
            continue;
        }
        let count = &mut ensemble.member_counts[[b, tr.state, tr.action]];
        *count += 1;
        let n = *count;
        let mut q = ensemble.q.index_axis_mut(Axis(0), b);
        let mut m = ensemble.m.index_axis_mut(Axis(0), b);
        two_timescale_update(&mut q, &mut m, n, tr, ensemble.discount, ensemble.k);
    }
}

/// Per-state mode of the members' greedy actions, ties to the lowest action.
pub fn greedy_policy(ensemble: &EnsembleTables) -> Vec<usize> {
    let (ns, na) = (ensemble.n_states(), ensemble.n_actions());
    (0..ns)
        .map(|s| {
            let mut votes = vec![0usize; na];
            for b in 0..ensemble.ensemble_size() {
                let row = ensemble.q.slice(ndarray::s![b, s, ..]);
                votes[argmax(row.iter().copied())] += 1;
            }
            argmax(votes.iter().map(|&v| v as f64))
        })
        .collect()
}

pub struct MfBpi {
    config: MfBpiConfig,
    tables: EnsembleTables,
    last_gap_min: f64,
}

impl MfBpi {
    pub fn new(
        config: MfBpiConfig,
        n_states: usize,
        n_actions: usize,
        discount: f64,
        rng: &mut Stream,
    ) -> Result<Self, AgentError> {
        if !(config.lambda >= 0.0) {
            return Err(AgentError::Config(format!(
                "lambda must be >= 0, got {}",
                config.lambda
            )));
        }
        config.exploration.validate()?;
        let tables = EnsembleTables::new(
            config.ensemble_size,
            n_states,
            n_actions,
            config.k,
            config.update_prob,
            discount,
            rng,
        )?;
        Ok(Self {
            config,
            tables,
            last_gap_min: f64::NAN,
        })
    }

    pub fn tables(&self) -> &EnsembleTables {
        &self.tables
    }
}

impl Agent for MfBpi {
    fn action_distribution(
        &mut self,
        state: usize,
        _t: u64,
        rng: &mut Stream,
    ) -> Result<Vec<f64>, AgentError> {
        let xi: f64 = rng.random();
        let (q_hat, m_hat) = quantile_sample(&self.tables, xi);
        let dist = match policy_and_gap(
            &q_hat,
            &m_hat,
            state,
            self.config.lambda,
            self.config.k,
            self.tables.discount,
        ) {
            Ok((dist, gap)) => {
                self.last_gap_min = gap;
                dist
            }
            Err(e) => {
                log::debug!("mf-bpi allocation unavailable, acting uniformly: {e}");
                uniform(self.tables.n_actions())
            }
        };
        Ok(self
            .config
            .exploration
            .mix(dist, self.tables.visits.state(state) + 1))
    }

    fn observe(&mut self, transition: &Transition, rng: &mut Stream) {
        mfbpi_update(&mut self.tables, transition, rng);
    }

    fn greedy_policy(&self) -> Result<Vec<usize>, AgentError> {
        Ok(greedy_policy(&self.tables))
    }

    fn delta_min_estimate(&self) -> f64 {
        self.last_gap_min
    }

    fn visits(&self) -> &VisitCounts {
        &self.tables.visits
    }
}
