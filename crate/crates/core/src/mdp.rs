//! Finite discounted MDPs with next-state-dependent Bernoulli rewards.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Stream;

/// Tolerance on row sums of the transition kernel and of the initial distribution.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("mdp must have at least one state and one action")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("transition row (state {state}, action {action}) sums to {sum}, not 1")]
    NonStochasticRow {
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error(
        "transition entry (state {state}, action {action}, next {next}) is negative or not finite"
    )]
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
    },
    #[error(
        "reward mean at (state {state}, action {action}, next {next}) = {value} is outside [0, 1]"
    )]
    RewardOutOfRange {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    #[error("discount {0} must lie in [0, 1)")]
    Discount(f64),
    #[error("initial distribution sums to {0}, not 1")]
    InitialDistribution(f64),
}

/// A validated tabular MDP.
///
/// `transition[[s, a, s']]` is `P(s' | s, a)` and `reward_mean[[s, a, s']]` the
/// success probability of the Bernoulli reward observed on that transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    transition: Array3<f64>,
    reward_mean: Array3<f64>,
    discount: f64,
    initial_dist: Array1<f64>,
    expected_reward: Array2<f64>,
    name: Option<String>,
}

impl TabularMdp {
    pub fn new(
        transition: Array3<f64>,
        reward_mean: Array3<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
    ) -> Result<Self, MdpError> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Empty);
        }
        if n_next != n_states {
            return Err(MdpError::Shape(format!(
                "transition is {n_states}x{n_actions}x{n_next}; last axis must equal the state count"
            )));
        }
        if reward_mean.dim() != transition.dim() {
            return Err(MdpError::Shape(format!(
                "reward_mean is {:?} but transition is {:?}",
                reward_mean.dim(),
                transition.dim()
            )));
        }
        if initial_dist.len() != n_states {
            return Err(MdpError::Shape(format!(
                "initial_dist has {} entries for {n_states} states",
                initial_dist.len()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(MdpError::Discount(discount));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut sum = 0.0;
                for next in 0..n_states {
                    let p = transition[[s, a, next]];
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(MdpError::NegativeProbability {
                            state: s,
                            action: a,
                            next,
                        });
                    }
                    sum += p;
                    let r = reward_mean[[s, a, next]];
                    if !(0.0..=1.0).contains(&r) {
                        return Err(MdpError::RewardOutOfRange {
                            state: s,
                            action: a,
                            next,
                            value: r,
                        });
                    }
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(MdpError::NonStochasticRow {
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
        let init_sum = initial_dist.sum();
        if (init_sum - 1.0).abs() > STOCHASTIC_TOL || initial_dist.iter().any(|&p| p < 0.0) {
            return Err(MdpError::InitialDistribution(init_sum));
        }
        let expected_reward = (&transition * &reward_mean).sum_axis(ndarray::Axis(2));
        Ok(Self {
            transition,
            reward_mean,
            discount,
            initial_dist,
            expected_reward,
            name: None,
        })
    }

    /// Same MDP starting deterministically in state 0.
    pub fn with_start_state(
        transition: Array3<f64>,
        reward_mean: Array3<f64>,
        discount: f64,
    ) -> Result<Self, MdpError> {
        let n = transition.dim().0;
        let mut init = Array1::zeros(n);
        if n > 0 {
            init[0] = 1.0;
        }
        Self::new(transition, reward_mean, discount, init)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// Copy with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self, MdpError> {
        if !(0.0..1.0).contains(&discount) {
            return Err(MdpError::Discount(discount));
        }
        let mut out = self.clone();
        out.discount = discount;
        Ok(out)
    }

    pub fn n_states(&self) -> usize {
        self.transition.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.transition.dim().1
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn reward_mean(&self) -> &Array3<f64> {
        &self.reward_mean
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    /// `P(. | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.transition.slice(ndarray::s![s, a, ..])
    }

    /// `r(s, a) = sum_s' P(s'|s,a) r(s,a,s')`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.expected_reward[[s, a]]
    }

    pub fn expected_rewards(&self) -> &Array2<f64> {
        &self.expected_reward
    }

    /// One-step lookahead `r(s,a) + gamma * sum_s' P(s'|s,a) v(s')`.
    pub fn backup(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let row = self.next_dist(s, a);
        let ev: f64 = row.iter().zip(v).map(|(p, x)| p * x).sum();
        self.expected_reward[[s, a]] + self.discount * ev
    }

    /// Draw `s_0 ~ p_0`.
    pub fn sample_initial(&self, rng: &mut Stream) -> usize {
        sample_index(self.initial_dist.iter().copied(), rng)
    }

    /// Draw `(r, s')` for the pair `(s, a)`.
    pub fn sample_transition(&self, s: usize, a: usize, rng: &mut Stream) -> (u8, usize) {
        let next = sample_index(self.next_dist(s, a).iter().copied(), rng);
        let mean = self.reward_mean[[s, a, next]];
        let u: f64 = rng.random();
        let reward = u8::from(u < mean);
        (reward, next)
    }
}

/// Inverse-CDF draw from a probability vector. Falls back to the last index
/// with positive mass when rounding leaves the cumulative sum below `u`.
pub fn sample_index(probs: impl IntoIterator<Item = f64>, rng: &mut Stream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// On-disk representation of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_mean: Vec<Vec<Vec<f64>>>,
}

impl From<TabularMdp> for MdpFile {
    fn from(mdp: TabularMdp) -> Self {
        let nest = |t: &Array3<f64>| -> Vec<Vec<Vec<f64>>> {
            t.outer_iter()
                .map(|sa| sa.outer_iter().map(|row| row.to_vec()).collect())
                .collect()
        };
        MdpFile {
            name: mdp.name.clone(),
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            discount: mdp.discount,
            initial_dist: mdp.initial_dist.to_vec(),
            transition: nest(&mdp.transition),
            reward_mean: nest(&mdp.reward_mean),
        }
    }
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = MdpError;

    fn try_from(file: MdpFile) -> Result<Self, MdpError> {
        let (ns, na) = (file.n_states, file.n_actions);
        let flatten = |field: &str, t: &[Vec<Vec<f64>>]| -> Result<Array3<f64>, MdpError> {
            if t.len() != ns
                || t.iter()
                    .any(|sa| sa.len() != na || sa.iter().any(|r| r.len() != ns))
            {
                return Err(MdpError::Shape(format!(
                    "{field} must be a {ns}x{na}x{ns} array"
                )));
            }
            let flat: Vec<f64> = t.iter().flatten().flatten().copied().collect();
            Array3::from_shape_vec((ns, na, ns), flat).map_err(|e| MdpError::Shape(e.to_string()))
        };
        let mut transition = flatten("transition", &file.transition)?;
        let reward_mean = flatten("reward_mean", &file.reward_mean)?;
        // Rows within tolerance of 1 are renormalized so that decimal text
        // round-off never accumulates; anything further off is rejected by `new`.
        for s in 0..ns {
            for a in 0..na {
                let mut row = transition.slice_mut(ndarray::s![s, a, ..]);
                let sum = row.sum();
                if (sum - 1.0).abs() <= STOCHASTIC_TOL && sum > 0.0 && sum != 1.0 {
                    row.mapv_inplace(|p| p / sum);
                }
            }
        }
        let mdp = TabularMdp::new(
            transition,
            reward_mean,
            file.discount,
            Array1::from(file.initial_dist),
        )?;
        Ok(match file.name {
            Some(name) => mdp.with_name(name),
            None => mdp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn one_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::with_start_state(array![[[1.0]]], array![[[reward]]], gamma).unwrap()
    }

    #[test]
    fn rejects_bad_rows_and_discount() {
        let err = TabularMdp::with_start_state(array![[[0.9]]], array![[[0.0]]], 0.5).unwrap_err();
        assert!(matches!(
            err,
            MdpError::NonStochasticRow {
                state: 0,
                action: 0,
                ..
            }
        ));
        let err = TabularMdp::with_start_state(array![[[1.0]]], array![[[0.0]]], 1.0).unwrap_err();
        assert_eq!(err, MdpError::Discount(1.0));
        let err = TabularMdp::with_start_state(array![[[1.0]]], array![[[1.5]]], 0.5).unwrap_err();
        assert!(matches!(err, MdpError::RewardOutOfRange { .. }));
    }

    #[test]
    fn deterministic_row_always_hits_support() {
        let t = array![[[0.0, 1.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]];
        let r = array![[[0.0, 1.0], [0.0, 0.0]], [[0.0, 1.0], [0.0, 0.0]]];
        let mdp = TabularMdp::with_start_state(t, r, 0.9).unwrap();
        let mut rng = Stream::seed_from_u64(7);
        for _ in 0..1000 {
            assert_eq!(mdp.sample_transition(0, 0, &mut rng), (1, 1));
            assert_eq!(mdp.sample_transition(1, 1, &mut rng), (0, 0));
        }
    }

    #[test]
    fn expected_reward_uses_next_state_means() {
        let t = array![[[0.25, 0.75]], [[1.0, 0.0]]];
        let r = array![[[1.0, 0.2]], [[0.0, 0.0]]];
        let mdp = TabularMdp::with_start_state(t, r, 0.5).unwrap();
        assert!((mdp.expected_reward(0, 0) - (0.25 + 0.75 * 0.2)).abs() < 1e-15);
        assert_eq!(one_state(1.0, 0.5).expected_reward(0, 0), 1.0);
    }

    #[test]
    fn same_stream_same_samples() {
        let mdp = one_state(0.3, 0.5);
        let mut a = Stream::seed_from_u64(3);
        let mut b = Stream::seed_from_u64(3);
        let xs: Vec<_> = (0..100)
            .map(|_| mdp.sample_transition(0, 0, &mut a))
            .collect();
        let ys: Vec<_> = (0..100)
            .map(|_| mdp.sample_transition(0, 0, &mut b))
            .collect();
        assert_eq!(xs, ys);
    }
}
