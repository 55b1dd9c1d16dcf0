//! Online exploration agents sharing one step interface: the harness asks for
//! an action distribution at the current state, samples an action, and feeds
//! the observed transition back.

mod ensemble;
mod obpi;
mod posterior;
mod qucb;

use ndarray::{Array2, ArrayViewMut2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::BoundError;
use crate::dp::DpError;
use crate::mdp::MdpError;
use crate::quantities::QuantityError;
use crate::solver::SolverError;
use crate::Stream;

pub use ensemble::{
    greedy_policy, mfbpi_policy, mfbpi_update, quantile_sample, EnsembleTables, MfBpi, MfBpiConfig,
};
pub use obpi::{OBpi, OBpiConfig};
pub use posterior::{PosteriorState, PsMdpNas, PsMdpNasConfig, Psrl, PsrlConfig};
pub use qucb::{QUcb, QUcbConfig};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Quantity(#[from] QuantityError),
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

/// One observed step `(s, a, r, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Visit counters `N(s)` and `N(s, a)`; they only ever increase.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitCounts {
    state: Vec<u64>,
    pair: Array2<u64>,
}

impl VisitCounts {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            state: vec![0; n_states],
            pair: Array2::zeros((n_states, n_actions)),
        }
    }

    pub fn record(&mut self, state: usize, action: usize) {
        self.state[state] += 1;
        self.pair[[state, action]] += 1;
    }

    pub fn state(&self, s: usize) -> u64 {
        self.state[s]
    }

    pub fn pair(&self, s: usize, a: usize) -> u64 {
        self.pair[[s, a]]
    }

    pub fn pairs(&self) -> &Array2<u64> {
        &self.pair
    }

    pub fn min_pair(&self) -> u64 {
        self.pair.iter().copied().min().unwrap_or(0)
    }
}

/// Uniform mixing applied on top of an agent's allocation. `n` counts visits
/// to the current state including the present one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForcedExploration {
    #[default]
    Off,
    /// `eps = 1 / n^alpha`.
    Power { alpha: f64 },
    /// `eps = max(floor, 1 / n)`.
    Floor { floor: f64 },
}

impl ForcedExploration {
    pub fn epsilon(&self, n: u64) -> f64 {
        let n = n.max(1) as f64;
        match *self {
            ForcedExploration::Off => 0.0,
            ForcedExploration::Power { alpha } => n.powf(-alpha).min(1.0),
            ForcedExploration::Floor { floor } => floor.max(1.0 / n).min(1.0),
        }
    }

    /// `eps * uniform + (1 - eps) * dist`.
    pub fn mix(&self, dist: Vec<f64>, n: u64) -> Vec<f64> {
        let eps = self.epsilon(n);
        if eps == 0.0 {
            return dist;
        }
        let u = eps / dist.len() as f64;
        dist.into_iter().map(|p| u + (1.0 - eps) * p).collect()
    }

    fn validate(&self) -> Result<(), AgentError> {
        match *self {
            ForcedExploration::Power { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(AgentError::Config(format!(
                    "forced exploration alpha must be in (0, 1], got {alpha}"
                )))
            }
            ForcedExploration::Floor { floor } if !(0.0..=1.0).contains(&floor) => {
                Err(AgentError::Config(format!(
                    "forced exploration floor must be in [0, 1], got {floor}"
                )))
            }
            _ => Ok(()),
        }
    }
}

pub trait Agent: Send {
    /// Distribution over actions at `state` before step `t` (0-based).
    fn action_distribution(
        &mut self,
        state: usize,
        t: u64,
        rng: &mut Stream,
    ) -> Result<Vec<f64>, AgentError>;
    fn observe(&mut self, transition: &Transition, rng: &mut Stream);
    /// Current estimate of the optimal policy.
    fn greedy_policy(&self) -> Result<Vec<usize>, AgentError>;
    /// Current estimate of the minimum gap; `NaN` when the agent keeps none.
    fn delta_min_estimate(&self) -> f64;
    fn visits(&self) -> &VisitCounts;
}

/// Agent selection and hyperparameters, tagged by `name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum AgentSpec {
    MfBpi(MfBpiConfig),
    OBpi(OBpiConfig),
    PsMdpNas(PsMdpNasConfig),
    QUcb(QUcbConfig),
    Psrl(PsrlConfig),
}

impl AgentSpec {
    pub fn label(&self) -> &'static str {
        match self {
            AgentSpec::MfBpi(_) => "mf-bpi",
            AgentSpec::OBpi(_) => "o-bpi",
            AgentSpec::PsMdpNas(_) => "ps-mdp-nas",
            AgentSpec::QUcb(_) => "q-ucb",
            AgentSpec::Psrl(_) => "psrl",
        }
    }

    pub fn build(
        &self,
        n_states: usize,
        n_actions: usize,
        discount: f64,
        rng: &mut Stream,
    ) -> Result<Box<dyn Agent>, AgentError> {
        if !(0.0..1.0).contains(&discount) {
            return Err(AgentError::Config(format!(
                "discount must be in [0, 1), got {discount}"
            )));
        }
        Ok(match self {
            AgentSpec::MfBpi(c) => {
                Box::new(MfBpi::new(c.clone(), n_states, n_actions, discount, rng)?)
            }
            AgentSpec::OBpi(c) => Box::new(OBpi::new(c.clone(), n_states, n_actions, discount)?),
            AgentSpec::PsMdpNas(c) => {
                Box::new(PsMdpNas::new(c.clone(), n_states, n_actions, discount)?)
            }
            AgentSpec::QUcb(c) => Box::new(QUcb::new(c.clone(), n_states, n_actions, discount)?),
            AgentSpec::Psrl(c) => Box::new(Psrl::new(c.clone(), n_states, n_actions, discount)?),
        })
    }
}

/// Solve cadence `max(min_period, ceil(t / divisor))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolveSchedule {
    pub min_period: u64,
    pub divisor: u64,
}

impl Default for ResolveSchedule {
    fn default() -> Self {
        Self {
            min_period: 200,
            divisor: 250,
        }
    }
}

impl ResolveSchedule {
    pub fn period(&self, t: u64) -> u64 {
        self.min_period.max(t.div_ceil(self.divisor.max(1))).max(1)
    }
}

/// `(H + 1) / (H + n)` with `H = 1 / (1 - gamma)`.
pub fn learning_rate(n: u64, discount: f64) -> f64 {
    let h = 1.0 / (1.0 - discount);
    (h + 1.0) / (h + n as f64)
}

fn max_row(q: &ArrayViewMut2<f64>, s: usize) -> f64 {
    q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Two-timescale update of one `(Q, M)` pair of tables after the `n`-th
/// update of `(s, a)`: Q-learning with rate `alpha`, then the moment table
/// toward `(delta' / gamma)^(2^k)` with rate `alpha^1.1`, where `delta'` uses
/// the freshly updated Q.
pub(crate) fn two_timescale_update(
    q: &mut ArrayViewMut2<f64>,
    m: &mut ArrayViewMut2<f64>,
    n: u64,
    tr: &Transition,
    discount: f64,
    k: usize,
) {
    let (s, a) = (tr.state, tr.action);
    let alpha = learning_rate(n, discount);
    let target = tr.reward + discount * max_row(q, tr.next_state);
    q[[s, a]] += alpha * (target - q[[s, a]]);
    let delta = tr.reward + discount * max_row(q, tr.next_state) - q[[s, a]];
    let beta = alpha.powf(1.1);
    let mut x = delta / discount;
    for _ in 0..k {
        x *= x;
    }
    m[[s, a]] += beta * (x - m[[s, a]]);
}

/// Minimum gap of a Q-table over non-greedy pairs; `NaN` with one action.
fn gap_min_of(q: &Array2<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for row in q.rows() {
        let g = crate::dp::argmax(row.iter().copied());
        for (a, &v) in row.iter().enumerate() {
            if a != g {
                best = best.min(row[g] - v);
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        f64::NAN
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
