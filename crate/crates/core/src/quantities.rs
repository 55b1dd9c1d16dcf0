//! Instance-specific hardness quantities: gaps, next-state variance, higher
//! central moments and span of the optimal value function.

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::dp::ValueSolution;
use crate::mdp::TabularMdp;

/// Largest moment order evaluated by default.
pub const DEFAULT_K_MAX: usize = 19;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantityError {
    #[error("no suboptimal state-action pair: the minimum gap is undefined")]
    NoSuboptimalPair,
    #[error("k_max must be at least 1")]
    KMax,
    #[error("value solution does not match the mdp dimensions")]
    Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceQuantities {
    /// `gap[[s, a]] = Q*(s, pi*(s)) - Q*(s, a)`.
    pub gap: Array2<f64>,
    /// Minimum gap over suboptimal pairs.
    pub gap_min: f64,
    pub variance: Array2<f64>,
    /// `moments[[k - 1, s, a]] = E[(V*(s') - E V*(s'))^(2^k)]`; may be `inf` or
    /// `0` once `2^k` overflows f64 range, see `moment_roots`.
    pub moments: Array3<f64>,
    /// `moment_roots[[k - 1, s, a]] = moments[k]^(2^-k)`, computed in a scaled form
    /// that stays finite for every `k`.
    pub moment_roots: Array3<f64>,
    /// `max_{s'} |V*(s') - E[V*(s') | s, a]|` over every state.
    pub span: Array2<f64>,
    /// The same deviation restricted to next states with positive probability.
    pub support_span: Array2<f64>,
    /// Smallest `k` attaining `max_k moment_roots[k]`.
    pub k_sup: Array2<usize>,
    pub k_max: usize,
    pub greedy: Vec<usize>,
}

impl InstanceQuantities {
    pub fn n_states(&self) -> usize {
        self.gap.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.gap.ncols()
    }

    /// `M^k_sa^(2^(1-k))`, the moment term entering the bound coefficients.
    /// For `k = 1` this is the variance itself, bit for bit.
    pub fn moment_term(&self, k: usize, s: usize, a: usize) -> f64 {
        if k == 1 {
            self.variance[[s, a]]
        } else {
            let root = self.moment_roots[[k - 1, s, a]];
            root * root
        }
    }

    pub fn max_moment_root(&self) -> f64 {
        self.moment_roots.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_suboptimal(&self, s: usize, a: usize) -> bool {
        self.greedy[s] != a
    }
}

/// `x^(2^k)` by repeated squaring.
fn pow_two_pow(x: f64, k: usize) -> f64 {
    let mut y = x;
    for _ in 0..k {
        y *= y;
    }
    y
}

pub fn compute_instance_quantities(
    mdp: &TabularMdp,
    sol: &ValueSolution,
    k_max: usize,
) -> Result<InstanceQuantities, QuantityError> {
    if k_max == 0 {
        return Err(QuantityError::KMax);
    }
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    if sol.v_star.len() != ns || sol.q_star.dim() != (ns, na) || sol.greedy.len() != ns {
        return Err(QuantityError::Shape);
    }
    let v = &sol.v_star;

    let mut gap = Array2::zeros((ns, na));
    let mut gap_min = f64::INFINITY;
    for s in 0..ns {
        let best = sol.q_star[[s, sol.greedy[s]]];
        for a in 0..na {
            let g = best - sol.q_star[[s, a]];
            gap[[s, a]] = g;
            if a != sol.greedy[s] {
                gap_min = gap_min.min(g);
            }
        }
    }
    if !gap_min.is_finite() {
        return Err(QuantityError::NoSuboptimalPair);
    }

    let mut variance = Array2::zeros((ns, na));
    let mut span = Array2::zeros((ns, na));
    let mut support_span = Array2::zeros((ns, na));
    let mut moments = Array3::zeros((k_max, ns, na));
    let mut moment_roots = Array3::zeros((k_max, ns, na));
    let mut k_sup = Array2::from_elem((ns, na), 1usize);

    for s in 0..ns {
        for a in 0..na {
            let row = mdp.next_dist(s, a);
            let mean: f64 = row.iter().zip(v).map(|(p, x)| p * x).sum();
            let mut full = 0.0f64;
            let mut supp = 0.0f64;
            for (p, x) in row.iter().zip(v) {
                let d = (x - mean).abs();
                full = full.max(d);
                if *p > 0.0 {
                    supp = supp.max(d);
                }
            }
            span[[s, a]] = full;
            support_span[[s, a]] = supp;

            let mut best_root = f64::NEG_INFINITY;
            for k in 1..=k_max {
                let m: f64 = row
                    .iter()
                    .zip(v)
                    .map(|(p, x)| p * pow_two_pow(x - mean, k))
                    .sum();
                moments[[k - 1, s, a]] = m;
                let root = if supp == 0.0 {
                    0.0
                } else if k == 1 {
                    m.sqrt()
                } else {
                    // supp * (E[(d / supp)^(2^k)])^(2^-k): every ratio is in [0, 1].
                    let scaled: f64 = row
                        .iter()
                        .zip(v)
                        .map(|(p, x)| p * pow_two_pow((x - mean) / supp, k))
                        .sum();
                    supp * scaled.powf(0.5f64.powi(k as i32))
                };
                moment_roots[[k - 1, s, a]] = root;
                if root > best_root {
                    best_root = root;
                    k_sup[[s, a]] = k;
                }
            }
            variance[[s, a]] = moments[[0, s, a]];
        }
    }

    Ok(InstanceQuantities {
        gap,
        gap_min,
        variance,
        moments,
        moment_roots,
        span,
        support_span,
        k_sup,
        k_max,
        greedy: sol.greedy.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::value_iteration;
    use ndarray::array;

    #[test]
    fn two_point_distribution_hand_values() {
        // P = (1/2, 1/2) over values (0, 2): mean 1, deviations +-1.
        let sol = ValueSolution {
            v_star: vec![0.0, 2.0],
            q_star: array![[1.0, 0.0], [1.0, 0.0]],
            greedy: vec![0, 0],
            residual: 0.0,
        };
        let t = array![[[0.5, 0.5], [1.0, 0.0]], [[0.5, 0.5], [1.0, 0.0]]];
        let r = Array3::zeros((2, 2, 2));
        let mdp = TabularMdp::with_start_state(t, r, 0.5).unwrap();
        let q = compute_instance_quantities(&mdp, &sol, 3).unwrap();
        assert_eq!(q.variance[[0, 0]], 1.0);
        assert_eq!(q.support_span[[0, 0]], 1.0);
        assert_eq!(q.span[[0, 0]], 1.0);
        assert_eq!(q.moments[[1, 0, 0]], 1.0);
        // Deterministic action to state 0: zero spread on the support, but the
        // full-state span sees V*(1) - V*(0) = 2.
        assert_eq!(q.variance[[0, 1]], 0.0);
        assert_eq!(q.support_span[[0, 1]], 0.0);
        assert_eq!(q.span[[0, 1]], 2.0);
    }

    #[test]
    fn deterministic_mdp_has_no_spread() {
        let t = array![[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]];
        let r = array![[[0.2, 0.0], [0.0, 0.9]], [[0.0, 0.4], [0.1, 0.0]]];
        let mdp = TabularMdp::with_start_state(t, r, 0.9).unwrap();
        let sol = value_iteration(&mdp, 1e-12, 100_000).unwrap();
        let q = compute_instance_quantities(&mdp, &sol, 19).unwrap();
        assert!(q.variance.iter().all(|&x| x == 0.0));
        assert!(q.support_span.iter().all(|&x| x == 0.0));
        assert!(q.moments.iter().all(|&x| x == 0.0));
        assert!(q.moment_roots.iter().all(|&x| x == 0.0));
        assert!(q.k_sup.iter().all(|&k| k == 1));
    }

    #[test]
    fn single_action_is_degenerate() {
        let mdp = TabularMdp::with_start_state(array![[[1.0]]], array![[[1.0]]], 0.5).unwrap();
        let sol = value_iteration(&mdp, 1e-12, 1000).unwrap();
        assert_eq!(
            compute_instance_quantities(&mdp, &sol, 3).unwrap_err(),
            QuantityError::NoSuboptimalPair
        );
    }

    #[test]
    fn moment_term_k1_is_variance() {
        let t = array![[[0.3, 0.7], [1.0, 0.0]], [[0.6, 0.4], [0.0, 1.0]]];
        let r = array![[[0.0, 1.0], [0.5, 0.0]], [[0.0, 0.0], [0.0, 0.3]]];
        let mdp = TabularMdp::with_start_state(t, r, 0.9).unwrap();
        let sol = value_iteration(&mdp, 1e-12, 100_000).unwrap();
        let q = compute_instance_quantities(&mdp, &sol, 4).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(
                    q.moment_term(1, s, a).to_bits(),
                    q.variance[[s, a]].to_bits()
                );
                let direct = q.moments[[1, s, a]].sqrt();
                assert!((q.moment_term(2, s, a) - direct).abs() <= 1e-12 * direct.max(1.0));
            }
        }
    }
}
