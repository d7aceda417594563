//! Primal-dual Monte Carlo tree search for finite-horizon MDPs.
//!
//! The search grows a partial decision tree with double progressive widening
//! and decides whether to add a new action at a state node by comparing a
//! sampled, smoothed information-relaxation upper bound on that action's
//! value with the node's current value estimate. Actions whose bound never
//! beats the incumbent are never expanded.
//!
//! Crate layout:
//!
//! - [`mdp`]: the problem abstraction, trajectories and policies.
//! - [`tree`]: the partial decision tree and its text snapshot format.
//! - [`policies`]: selection (UCB1, epsilon-greedy), candidate sampling and
//!   default rollout policies.
//! - [`dual`]: dual penalties, the deterministic inner problem and the
//!   smoothed dual estimates.
//! - [`engine`]: the search loop plus a vanilla baseline.
//! - [`oracle`]: exact backward induction for small instances.
//! - [`problems`]: stochastic shortest path, ride-share driver and random MDPs.
//! - [`harness`]: experiment runner, metrics and output files.

pub mod dual;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod policies;
pub mod problems;
pub mod rng;
pub mod tree;

pub use error::{Error, Result};
pub use mdp::{Mdp, Policy, Stage, Successor, Trajectory};
