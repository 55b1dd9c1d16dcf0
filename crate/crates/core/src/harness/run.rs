use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::agents::{Agent, Transition};
use crate::dp::{policy_values_exact, value_iteration, ValueSolution, DEFAULT_MAX_ITER};
use crate::mdp::{sample_index, TabularMdp};

/// `1 - |V* - V^pi|_inf / |V*|_inf`, with `V^pi` from an exact linear solve.
pub fn evaluate_policy_quality(
    mdp: &TabularMdp,
    sol: &ValueSolution,
    policy: &[usize],
) -> Result<f64, HarnessError> {
    let scale = sol.v_star.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(HarnessError::ZeroValues);
    }
    let v_pi = policy_values_exact(mdp, policy)?;
    let err = sol
        .v_star
        .iter()
        .zip(&v_pi)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(1.0 - err / scale)
}

/// One evaluation of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub t: u64,
    pub metric: f64,
    pub min_visits: u64,
    pub delta_min_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub final_policy: Vec<usize>,
    /// Set when the seed aborted; `rows` then holds the evaluations made so far.
    pub error: Option<String>,
}

fn evaluate(
    agent: &dyn Agent,
    mdp: &TabularMdp,
    sol: &ValueSolution,
    seed: u64,
    t: u64,
) -> Result<(MetricRow, Vec<usize>), HarnessError> {
    let policy = agent.greedy_policy()?;
    let metric = evaluate_policy_quality(mdp, sol, &policy)?;
    let row = MetricRow {
        seed,
        t,
        metric,
        min_visits: agent.visits().min_pair(),
        delta_min_est: agent.delta_min_estimate(),
    };
    Ok((row, policy))
}

/// The agent loop for one seed: act, step the environment, feed the
/// transition back, and evaluate every `eval_period` steps (and at `t = 0`).
pub fn run_seed(
    config: &ExperimentConfig,
    mdp: &TabularMdp,
    sol: &ValueSolution,
    seed: u64,
) -> RunRecord {
    let mut record = RunRecord {
        seed,
        rows: Vec::new(),
        final_policy: Vec::new(),
        error: None,
    };
    if let Err(e) = drive(config, mdp, sol, seed, &mut record) {
        log::warn!("seed {seed} aborted: {e}");
        record.error = Some(e.to_string());
    }
    record
}

fn drive(
    config: &ExperimentConfig,
    mdp: &TabularMdp,
    sol: &ValueSolution,
    seed: u64,
    record: &mut RunRecord,
) -> Result<(), HarnessError> {
    let mut env_rng = crate::stream(config.master_seed, 2 * seed);
    let mut agent_rng = crate::stream(config.master_seed, 2 * seed + 1);
    let mut agent = config.agent.build(
        mdp.n_states(),
        mdp.n_actions(),
        mdp.discount(),
        &mut agent_rng,
    )?;
    let push = |agent: &dyn Agent, t: u64, record: &mut RunRecord| -> Result<(), HarnessError> {
        let (row, policy) = evaluate(agent, mdp, sol, seed, t)?;
        record.rows.push(row);
        record.final_policy = policy;
        Ok(())
    };
    let mut state = mdp.sample_initial(&mut env_rng);
    push(agent.as_ref(), 0, record)?;
    for t in 0..config.horizon {
        let dist = agent.action_distribution(state, t, &mut agent_rng)?;
        debug_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let action = sample_index(dist.iter().copied(), &mut agent_rng);
        let (reward, next_state) = mdp.sample_transition(state, action, &mut env_rng);
        agent.observe(
            &Transition {
                state,
                action,
                reward: f64::from(reward),
                next_state,
            },
            &mut agent_rng,
        );
        state = next_state;
        if (t + 1) % config.eval_period == 0 {
            push(agent.as_ref(), t + 1, record)?;
        }
    }
    Ok(())
}

/// Runs every seed in parallel; records come back in the order of
/// `config.seeds`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    config.validate()?;
    let mdp = config.environment.build(config.discount)?;
    let sol = value_iteration(&mdp, 1e-10, DEFAULT_MAX_ITER)?;
    Ok(config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &mdp, &sol, seed))
        .collect())
}

/// Writes `metrics.csv`, `final_policies.csv` and, when a seed aborted,
/// `failures.csv` into `dir`.
pub fn write_run_outputs(records: &[RunRecord], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
    for row in records.iter().flat_map(|r| &r.rows) {
        metrics.serialize(row)?;
    }
    metrics.flush()?;

    let mut policies = csv::Writer::from_path(dir.join("final_policies.csv"))?;
    policies.write_record(["seed", "policy"])?;
    for r in records {
        let policy: Vec<String> = r.final_policy.iter().map(|a| a.to_string()).collect();
        policies.write_record([r.seed.to_string(), policy.join(" ")])?;
    }
    policies.flush()?;

    let failures = dir.join("failures.csv");
    if records.iter().any(|r| r.error.is_some()) {
        let mut w = csv::Writer::from_path(failures)?;
        w.write_record(["seed", "error"])?;
        for r in records {
            if let Some(e) = &r.error {
                w.write_record([r.seed.to_string(), e.clone()])?;
            }
        }
        w.flush()?;
    } else if failures.exists() {
        std::fs::remove_file(failures)?;
    }
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|row| row.map_err(HarnessError::from))
        .collect()
}
