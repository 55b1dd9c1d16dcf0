//! Experiment orchestration: the agent loop and its metric, instance and bound
//! reports, CSV persistence and SVG plots.
//!
//! Randomness: seed `i` of a run draws environment samples from
//! `stream(master_seed, 2 i)` and agent randomness from
//! `stream(master_seed, 2 i + 1)`, so adding seeds never changes existing ones.

mod plot;
mod reports;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentSpec};
use crate::bounds::BoundError;
use crate::dp::DpError;
use crate::env::{EnvError, EnvSpec};
use crate::quantities::QuantityError;
use crate::solver::SolverError;

pub use plot::{render_bounds, render_curves, render_plots};
pub use reports::{
    bounds_compare, quantities_for_mdp, quantities_report, write_bounds_csv, write_quantities_csv,
    BoundRow, BoundsReport, QuantityRow,
};
pub use run::{
    evaluate_policy_quality, read_metrics_csv, run_experiment, run_seed, write_run_outputs,
    MetricRow, RunRecord,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Quantity(#[from] QuantityError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("optimal values are identically zero; the relative metric is undefined")]
    ZeroValues,
    #[error("nothing to plot: {0}")]
    EmptyInput(String),
}

pub const DEFAULT_EVAL_PERIOD: u64 = 200;
pub const DEFAULT_RUN_DISCOUNT: f64 = 0.99;

fn default_eval_period() -> u64 {
    DEFAULT_EVAL_PERIOD
}

fn default_discount() -> f64 {
    DEFAULT_RUN_DISCOUNT
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub agent: AgentSpec,
    pub horizon: u64,
    #[serde(default = "default_eval_period")]
    pub eval_period: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.eval_period == 0 {
            return Err(HarnessError::Config(
                "eval_period must be at least 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(HarnessError::Config(format!(
                "discount must be in [0, 1), got {}",
                self.discount
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
horizon = 1000
seeds = [0, 1]
output_dir = "out"

[environment]
family = "riverswim"
size = 5

[agent]
name = "q-ucb"
bonus_scale = 0.5
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(c.eval_period, 200);
        assert_eq!(c.discount, 0.99);
        assert_eq!(c.master_seed, 0);
        assert_eq!(c.agent.label(), "q-ucb");
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(
            ExperimentConfig::from_toml(&EXAMPLE.replace("seeds = [0, 1]", "seeds = []")).is_err()
        );
        assert!(ExperimentConfig::from_toml(&format!("eval_period = 0\n{EXAMPLE}")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("typo = 1\n{EXAMPLE}")).is_err());
    }
}
