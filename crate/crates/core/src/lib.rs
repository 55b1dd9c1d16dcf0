//! Exploration toolkit for best-policy identification in tabular MDPs.
//!
//! The crate is organized bottom-up:
//!
//! - [`mdp`], [`dp`] and [`quantities`]: MDP representation, optimal values and
//!   the instance-specific quantities (gaps, variances, higher moments, spans).
//! - [`env`]: RiverSwim, Forked RiverSwim and random MDPs, plus the JSON MDP file format.
//! - [`bounds`]: characteristic-time upper bounds `U0`, `U`, `U1`, `Ũ` and the
//!   closed-form generative allocation.
//! - [`solver`]: mirror descent on the simplex and Dykstra projection onto the
//!   navigation (flow) constraints.
//! - [`agents`]: bootstrapped MF-BPI, O-BPI, PS-MDP-NaS and the Q-UCB / PSRL baselines.
//! - [`harness`]: experiment runner, reports, CSV and SVG output.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod bounds;
pub mod dp;
pub mod env;
pub mod harness;
pub mod mdp;
pub mod quantities;
pub mod solver;

use rand::SeedableRng;

pub use bounds::{Allocation, BoundInputs, KChoice};
pub use dp::{policy_evaluation, policy_iteration, value_iteration, ValueSolution};
pub use env::{make_forked_riverswim, make_random_mdp, make_riverswim, EnvFamily, EnvSpec};
pub use mdp::TabularMdp;
pub use quantities::{compute_instance_quantities, InstanceQuantities};

/// Random stream used everywhere in the crate.
pub type Stream = rand_chacha::ChaCha8Rng;

/// Stream number `index` of the generator seeded with `master`.
///
/// Streams are independent ChaCha8 streams sharing one key, so adding an
/// index never changes the draws of another.
pub fn stream(master: u64, index: u64) -> Stream {
    let mut rng = Stream::seed_from_u64(master);
    rng.set_stream(index);
    rng
}
