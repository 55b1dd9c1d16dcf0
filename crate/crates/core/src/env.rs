//! Benchmark MDP families and the MDP file format.
//!
//! RiverSwim right-action kernel (action 1):
//!
//! | state        | back | stay | forward |
//! |--------------|------|------|---------|
//! | first        |  -   | 0.7  | 0.3     |
//! | intermediate | 0.1  | 0.6  | 0.3     |
//! | last         | 0.7  | 0.3  |  -      |
//!
//! Left (action 0) moves deterministically one state back (the first state
//! loops on itself). Rewards are Bernoulli(0.05) on `(first, left)` and
//! Bernoulli(1) on `(last, right)`; every other reward is 0.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array3};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MdpError, MdpFile, TabularMdp};
use crate::Stream;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const SWITCH: usize = 2;

const FIRST_RIGHT: [f64; 2] = [0.7, 0.3]; // stay, forward
const MIDDLE_RIGHT: [f64; 3] = [0.1, 0.6, 0.3]; // back, stay, forward
const LAST_RIGHT: [f64; 2] = [0.7, 0.3]; // back, stay
const LEFT_REWARD: f64 = 0.05;

/// Discount attached to freshly built environments; callers override it.
pub const DEFAULT_DISCOUNT: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{family} needs {what} >= {min}, got {got}")]
    TooSmall {
        family: &'static str,
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("forked riverswim has an odd number of states (2 * branch_len - 1), got {0}")]
    ForkedSize(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed mdp file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Invalid(#[from] MdpError),
}

fn too_small(family: &'static str, what: &'static str, min: usize, got: usize) -> EnvError {
    EnvError::TooSmall {
        family,
        what,
        min,
        got,
    }
}

/// Right-action kernel along a river given as an ordered list of states.
fn river_right(transition: &mut Array3<f64>, river: &[usize]) {
    let last = river.len() - 1;
    for (i, &s) in river.iter().enumerate() {
        if i == 0 {
            transition[[s, RIGHT, s]] += FIRST_RIGHT[0];
            transition[[s, RIGHT, river[1]]] += FIRST_RIGHT[1];
        } else if i == last {
            transition[[s, RIGHT, river[i - 1]]] += LAST_RIGHT[0];
            transition[[s, RIGHT, s]] += LAST_RIGHT[1];
        } else {
            transition[[s, RIGHT, river[i - 1]]] += MIDDLE_RIGHT[0];
            transition[[s, RIGHT, s]] += MIDDLE_RIGHT[1];
            transition[[s, RIGHT, river[i + 1]]] += MIDDLE_RIGHT[2];
        }
    }
}

fn set_reward(reward: &mut Array3<f64>, s: usize, a: usize, mean: f64) {
    reward.slice_mut(ndarray::s![s, a, ..]).fill(mean);
}

pub fn make_riverswim(n_states: usize) -> Result<TabularMdp, EnvError> {
    if n_states < 2 {
        return Err(too_small("riverswim", "n_states", 2, n_states));
    }
    let n = n_states;
    let mut transition = Array3::zeros((n, 2, n));
    let mut reward = Array3::zeros((n, 2, n));
    for s in 0..n {
        transition[[s, LEFT, s.saturating_sub(1)]] = 1.0;
    }
    let river: Vec<usize> = (0..n).collect();
    river_right(&mut transition, &river);
    set_reward(&mut reward, 0, LEFT, LEFT_REWARD);
    set_reward(&mut reward, n - 1, RIGHT, 1.0);
    Ok(
        TabularMdp::with_start_state(transition, reward, DEFAULT_DISCOUNT)?
            .with_name(format!("riverswim-{n}")),
    )
}

/// Index of the `i`-th state (1-based along the river, `i >= 2`) of the first
/// or second branch of a forked river with `branch_len` states per branch
/// counting the shared fork state.
pub fn forked_state(branch_len: usize, second_branch: bool, i: usize) -> usize {
    debug_assert!(i >= 1 && i <= branch_len);
    if i == 1 {
        0
    } else if second_branch {
        branch_len + i - 2
    } else {
        i - 1
    }
}

/// Forked RiverSwim with `2 * branch_len - 1` states and actions
/// left / right / switch.
///
/// State 0 is the fork `s_1`; states `1..branch_len` form the first branch
/// (`s_2 .. s_g`, tip rewarded with Bernoulli(1)) and the remaining states the
/// mirrored second branch (`s_2' .. s_g'`, tip rewarded with Bernoulli(0.95)).
/// Right follows the RiverSwim kernel along the first branch from the fork;
/// switch jumps deterministically to the mirrored state, and from the fork to
/// `s_2'`.
pub fn make_forked_riverswim(branch_len: usize) -> Result<TabularMdp, EnvError> {
    if branch_len < 2 {
        return Err(too_small("forked riverswim", "branch_len", 2, branch_len));
    }
    let n = 2 * branch_len - 1;
    let mut transition = Array3::zeros((n, 3, n));
    let mut reward = Array3::zeros((n, 3, n));
    let first: Vec<usize> = (1..=branch_len)
        .map(|i| forked_state(branch_len, false, i))
        .collect();
    let second: Vec<usize> = (1..=branch_len)
        .map(|i| forked_state(branch_len, true, i))
        .collect();

    transition[[0, LEFT, 0]] = 1.0;
    transition[[0, SWITCH, second[1]]] = 1.0;
    river_right(&mut transition, &first);
    // The second branch shares the kernel except at the fork, whose right
    // action is already set by the first branch.
    for i in 1..branch_len {
        let s = second[i];
        if i == branch_len - 1 {
            transition[[s, RIGHT, second[i - 1]]] += LAST_RIGHT[0];
            transition[[s, RIGHT, s]] += LAST_RIGHT[1];
        } else {
            transition[[s, RIGHT, second[i - 1]]] += MIDDLE_RIGHT[0];
            transition[[s, RIGHT, s]] += MIDDLE_RIGHT[1];
            transition[[s, RIGHT, second[i + 1]]] += MIDDLE_RIGHT[2];
        }
    }
    for i in 1..branch_len {
        transition[[first[i], LEFT, first[i - 1]]] = 1.0;
        transition[[second[i], LEFT, second[i - 1]]] = 1.0;
        transition[[first[i], SWITCH, second[i]]] = 1.0;
        transition[[second[i], SWITCH, first[i]]] = 1.0;
    }
    set_reward(&mut reward, 0, LEFT, LEFT_REWARD);
    set_reward(&mut reward, first[branch_len - 1], RIGHT, 1.0);
    set_reward(&mut reward, second[branch_len - 1], RIGHT, 0.95);
    Ok(
        TabularMdp::with_start_state(transition, reward, DEFAULT_DISCOUNT)?
            .with_name(format!("forked-{n}")),
    )
}

/// Branch length of a forked river with `n_states` states in total.
pub fn forked_branch_len(n_states: usize) -> Result<usize, EnvError> {
    if n_states < 3 || n_states.is_multiple_of(2) {
        return Err(EnvError::ForkedSize(n_states));
    }
    Ok(n_states.div_ceil(2))
}

/// `alpha_1 = 1`, `alpha_i = alpha_{i-1} + (i - 1) / 10`.
pub fn random_mdp_concentration(n_states: usize) -> Vec<f64> {
    let mut alpha = Vec::with_capacity(n_states);
    let mut current = 1.0;
    for i in 1..=n_states {
        if i > 1 {
            current += (i - 1) as f64 / 10.0;
        }
        alpha.push(current);
    }
    alpha
}

/// Dirichlet draw as normalized independent Gamma(alpha_i, 1) variates.
pub fn sample_dirichlet(alpha: &[f64], rng: &mut Stream) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            Gamma::new(a, 1.0)
                .expect("positive concentration")
                .sample(rng)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        // Every gamma underflowed (tiny concentrations); fall back to the mean.
        let sum: f64 = alpha.iter().sum();
        draws.iter_mut().zip(alpha).for_each(|(x, a)| *x = a / sum);
    }
    draws
}

/// Random MDP: each transition row and each next-state reward vector of each
/// `(s, a)` is an independent `Dir(alpha)` draw, in the order
/// `(s, a, transition), (s, a, reward)`.
pub fn make_random_mdp(
    n_states: usize,
    n_actions: usize,
    rng: &mut Stream,
) -> Result<TabularMdp, EnvError> {
    if n_states < 2 {
        return Err(too_small("random mdp", "n_states", 2, n_states));
    }
    if n_actions < 2 {
        return Err(too_small("random mdp", "n_actions", 2, n_actions));
    }
    let alpha = random_mdp_concentration(n_states);
    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    let mut reward = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let p = sample_dirichlet(&alpha, rng);
            let q = sample_dirichlet(&alpha, rng);
            transition
                .slice_mut(ndarray::s![s, a, ..])
                .assign(&Array1::from(p));
            reward
                .slice_mut(ndarray::s![s, a, ..])
                .assign(&Array1::from(q));
        }
    }
    Ok(
        TabularMdp::with_start_state(transition, reward, DEFAULT_DISCOUNT)?
            .with_name(format!("random-{n_states}")),
    )
}

/// Environment families addressable from configs and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvFamily {
    Riverswim,
    Forked,
    Random,
}

impl std::str::FromStr for EnvFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "riverswim" => Ok(Self::Riverswim),
            "forked" => Ok(Self::Forked),
            "random" => Ok(Self::Random),
            other => Err(format!(
                "unknown environment family '{other}' (riverswim|forked|random)"
            )),
        }
    }
}

impl std::fmt::Display for EnvFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Riverswim => "riverswim",
            Self::Forked => "forked",
            Self::Random => "random",
        })
    }
}

/// A buildable environment: family, total number of states and, for random
/// MDPs, the seed of the draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub family: EnvFamily,
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_random_actions")]
    pub n_actions: usize,
}

fn default_random_actions() -> usize {
    3
}

impl EnvSpec {
    pub fn new(family: EnvFamily, size: usize) -> Self {
        Self {
            family,
            size,
            seed: 0,
            n_actions: default_random_actions(),
        }
    }

    pub fn build(&self, discount: f64) -> Result<TabularMdp, EnvError> {
        let mdp = match self.family {
            EnvFamily::Riverswim => make_riverswim(self.size)?,
            EnvFamily::Forked => make_forked_riverswim(forked_branch_len(self.size)?)?,
            EnvFamily::Random => {
                let mut rng = crate::stream(self.seed, 0);
                make_random_mdp(self.size, self.n_actions, &mut rng)?
            }
        };
        Ok(mdp.with_discount(discount)?)
    }
}

pub fn save_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<(), EnvError> {
    let path = path.as_ref();
    let file = MdpFile::from(mdp.clone());
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| EnvError::Malformed(e.to_string()))?;
    fs::write(path, text).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp, EnvError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_mdp(&text)
}

pub fn parse_mdp(text: &str) -> Result<TabularMdp, EnvError> {
    let file: MdpFile =
        serde_json::from_str(text).map_err(|e| EnvError::Malformed(e.to_string()))?;
    if file.transition.len() != file.n_states || file.initial_dist.len() != file.n_states {
        return Err(EnvError::Malformed(format!(
            "declared n_states = {} does not match the arrays",
            file.n_states
        )));
    }
    Ok(TabularMdp::try_from(file)?)
}
