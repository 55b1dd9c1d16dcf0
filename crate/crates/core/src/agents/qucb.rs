//! Optimistic Q-learning with a count-based bonus.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{gap_min_of, learning_rate, Agent, AgentError, Transition, VisitCounts};
use crate::dp::argmax;
use crate::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QUcbConfig {
    /// Bonus scale `c` in `c * sqrt(H log(t + 1) / N(s, a))`.
    pub bonus_scale: f64,
}

impl Default for QUcbConfig {
    fn default() -> Self {
        Self { bonus_scale: 1.0 }
    }
}

pub struct QUcb {
    config: QUcbConfig,
    discount: f64,
    q: Array2<f64>,
    visits: VisitCounts,
    steps: u64,
}

impl QUcb {
    pub fn new(
        config: QUcbConfig,
        n_states: usize,
        n_actions: usize,
        discount: f64,
    ) -> Result<Self, AgentError> {
        if !(config.bonus_scale >= 0.0) {
            return Err(AgentError::Config(format!(
                "bonus scale must be >= 0, got {}",
                config.bonus_scale
            )));
        }
        Ok(Self {
            config,
            discount,
            q: Array2::from_elem((n_states, n_actions), 1.0 / (1.0 - discount)),
            visits: VisitCounts::new(n_states, n_actions),
            steps: 0,
        })
    }

    pub fn q_values(&self) -> &Array2<f64> {
        &self.q
    }
}

impl Agent for QUcb {
    fn action_distribution(
        &mut self,
        state: usize,
        _t: u64,
        _rng: &mut Stream,
    ) -> Result<Vec<f64>, AgentError> {
        let mut dist = vec![0.0; self.q.ncols()];
        dist[argmax(self.q.row(state).iter().copied())] = 1.0;
        Ok(dist)
    }

    fn observe(&mut self, tr: &Transition, _rng: &mut Stream) {
        self.steps += 1;
        self.visits.record(tr.state, tr.action);
        let n = self.visits.pair(tr.state, tr.action);
        let h = 1.0 / (1.0 - self.discount);
        let bonus =
            self.config.bonus_scale * (h * ((self.steps + 1) as f64).ln() / n as f64).sqrt();
        let next = self
            .q
            .row(tr.next_state)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .min(h);
        let alpha = learning_rate(n, self.discount);
        let q = &mut self.q[[tr.state, tr.action]];
        *q += alpha * (tr.reward + bonus + self.discount * next - *q);
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bonus_is_plain_q_learning() {
        let gamma = 0.9;
        let mut agent = QUcb::new(QUcbConfig { bonus_scale: 0.0 }, 2, 2, gamma).unwrap();
        let mut rng = crate::stream(0, 0);
        let tr = Transition {
            state: 0,
            action: 1,
            reward: 1.0,
            next_state: 1,
        };
        agent.observe(&tr, &mut rng);
        // First visit: rate 1, target 1 + 0.9 * 10.
        assert!((agent.q_values()[[0, 1]] - 10.0).abs() < 1e-12);
        assert_eq!(
            agent.action_distribution(0, 1, &mut rng).unwrap(),
            vec![1.0, 0.0]
        );
    }
}
