//! Lexicographic multi-objective reinforcement learning.
//!
//! A policy is lexicographically optimal if it maximises the first objective,
//! and among all policies that do so also maximises the second, and so on.
//! This crate provides:
//!
//! - [`momdp`]: finite multi-objective MDPs, a seeded random generator, and
//!   the GridNav safety environment;
//! - [`lexoracle`]: exact ground truth (lexicographic value iteration, exact
//!   policy evaluation, brute-force policy enumeration);
//! - [`value_based`]: lexicographic bandits and the Q-learning / SARSA /
//!   Expected SARSA / Double Q-learning update rules;
//! - [`policy_based`]: multi-timescale Lagrangian policy gradients (LA2C and
//!   KL-penalised LPPO) with linear critics;
//! - [`harness`]: experiment protocols, convergence detection, and metrics
//!   persistence;
//! - [`config`]: strict text-format experiment configuration.

pub mod config;
pub mod harness;
pub mod lexoracle;
pub mod momdp;
pub mod policy_based;
pub mod value_based;

mod util;

pub use util::{derive_seed, seeded_rng};
