//! Dynamic programming: optimal values, policy evaluation, policy iteration.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use thiserror::Error;

use crate::mdp::TabularMdp;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("policy has {got} entries for {expected} states")]
    PolicyLength { expected: usize, got: usize },
    #[error("policy action {action} at state {state} is out of range")]
    PolicyAction { state: usize, action: usize },
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("linear system for policy evaluation is singular")]
    Singular,
}

/// Optimal value function, Q-table and greedy policy of an MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution {
    pub v_star: Vec<f64>,
    pub q_star: Array2<f64>,
    pub greedy: Vec<usize>,
    /// Sup-norm of `T v_star - v_star`.
    pub residual: f64,
}

/// First index of the maximum; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

fn q_table(mdp: &TabularMdp, v: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((mdp.n_states(), mdp.n_actions()), |(s, a)| {
        mdp.backup(s, a, v)
    })
}

fn solution_from_values(mdp: &TabularMdp, v: Vec<f64>) -> ValueSolution {
    let q = q_table(mdp, &v);
    let greedy: Vec<usize> = q
        .rows()
        .into_iter()
        .map(|row| argmax(row.iter().copied()))
        .collect();
    let residual = greedy
        .iter()
        .enumerate()
        .map(|(s, &a)| (q[[s, a]] - v[s]).abs())
        .fold(0.0, f64::max);
    ValueSolution {
        v_star: v,
        q_star: q,
        greedy,
        residual,
    }
}

/// Jacobi value iteration until the Bellman residual of the returned values is
/// at most `tol`.
pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iter: usize,
) -> Result<ValueSolution, DpError> {
    if !(tol > 0.0) {
        return Err(DpError::Tolerance(tol));
    }
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        residual = 0.0;
        for s in 0..ns {
            let best = (0..na)
                .map(|a| mdp.backup(s, a, &v))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (best - v[s]).abs());
            next[s] = best;
        }
        if residual <= tol {
            // `v` (not `next`) is the vector whose residual was measured.
            return Ok(solution_from_values(mdp, v));
        }
        std::mem::swap(&mut v, &mut next);
    }
    Err(DpError::NotConverged {
        iterations: max_iter,
        residual,
    })
}

fn check_policy(mdp: &TabularMdp, policy: &[usize]) -> Result<(), DpError> {
    if policy.len() != mdp.n_states() {
        return Err(DpError::PolicyLength {
            expected: mdp.n_states(),
            got: policy.len(),
        });
    }
    if let Some((state, &action)) = policy
        .iter()
        .enumerate()
        .find(|(_, &a)| a >= mdp.n_actions())
    {
        return Err(DpError::PolicyAction { state, action });
    }
    Ok(())
}

/// Iterative evaluation of a deterministic policy; stops once
/// `||T_pi v - v||_inf <= tol`.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &[usize],
    tol: f64,
) -> Result<Vec<f64>, DpError> {
    check_policy(mdp, policy)?;
    if !(tol > 0.0) {
        return Err(DpError::Tolerance(tol));
    }
    let ns = mdp.n_states();
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    loop {
        let mut residual: f64 = 0.0;
        for s in 0..ns {
            next[s] = mdp.backup(s, policy[s], &v);
            residual = residual.max((next[s] - v[s]).abs());
        }
        if residual <= tol {
            return Ok(v);
        }
        std::mem::swap(&mut v, &mut next);
    }
}

/// Exact `V^pi` from `(I - gamma P_pi) v = r_pi`.
pub fn policy_values_exact(mdp: &TabularMdp, policy: &[usize]) -> Result<Vec<f64>, DpError> {
    check_policy(mdp, policy)?;
    let ns = mdp.n_states();
    let gamma = mdp.discount();
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        let row = mdp.next_dist(s, policy[s]);
        for (next, p) in row.iter().enumerate() {
            a[(s, next)] -= gamma * p;
        }
        b[s] = mdp.expected_reward(s, policy[s]);
    }
    let x = a.lu().solve(&b).ok_or(DpError::Singular)?;
    Ok(x.iter().copied().collect())
}

/// Howard policy iteration with exact evaluation, started from the greedy
/// policy of the immediate reward. Improvement switches action only on a
/// strict gain above `1e-12` so the loop cannot cycle on ties.
pub fn policy_iteration(mdp: &TabularMdp) -> Result<ValueSolution, DpError> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let rewards = mdp.expected_rewards();
    let mut policy: Vec<usize> = (0..ns)
        .map(|s| argmax((0..na).map(|a| rewards[[s, a]])))
        .collect();
    for _ in 0..10_000 {
        let v = policy_values_exact(mdp, &policy)?;
        let mut changed = false;
        for (s, action) in policy.iter_mut().enumerate() {
            let current = mdp.backup(s, *action, &v);
            let q: Vec<f64> = (0..na).map(|a| mdp.backup(s, a, &v)).collect();
            let best = argmax(q.iter().copied());
            if q[best] > current + 1e-12 {
                *action = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(solution_from_values(mdp, v));
        }
    }
    Err(DpError::NotConverged {
        iterations: 10_000,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn geometric_series_single_state() {
        let mdp = TabularMdp::with_start_state(array![[[1.0]]], array![[[1.0]]], 0.5).unwrap();
        let sol = value_iteration(&mdp, 1e-12, 1000).unwrap();
        assert!((sol.v_star[0] - 2.0).abs() < 1e-11);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn two_state_chain_closed_form() {
        // s0 -> s1 (reward 0), s1 -> s1 (reward 1).
        let t = array![[[0.0, 1.0]], [[0.0, 1.0]]];
        let r = array![[[0.0, 0.0]], [[0.0, 1.0]]];
        let mdp = TabularMdp::with_start_state(t, r, 0.5).unwrap();
        let sol = value_iteration(&mdp, 1e-12, 1000).unwrap();
        assert!((sol.v_star[0] - 1.0).abs() < 1e-10);
        assert!((sol.v_star[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mdp = TabularMdp::with_start_state(array![[[1.0]]], array![[[1.0]]], 0.99).unwrap();
        match value_iteration(&mdp, 1e-12, 5) {
            Err(DpError::NotConverged {
                iterations: 5,
                residual,
            }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ties_go_to_lowest_action() {
        let t = array![[[1.0], [1.0]]];
        let r = array![[[0.5], [0.5]]];
        let mdp = TabularMdp::with_start_state(t, r, 0.5).unwrap();
        assert_eq!(value_iteration(&mdp, 1e-10, 1000).unwrap().greedy, vec![0]);
        assert_eq!(policy_iteration(&mdp).unwrap().greedy, vec![0]);
    }

    #[test]
    fn policy_checks() {
        let mdp = TabularMdp::with_start_state(array![[[1.0]]], array![[[1.0]]], 0.5).unwrap();
        assert!(matches!(
            policy_evaluation(&mdp, &[1], 1e-9),
            Err(DpError::PolicyAction { .. })
        ));
        assert!(matches!(
            policy_evaluation(&mdp, &[], 1e-9),
            Err(DpError::PolicyLength { .. })
        ));
    }
}
