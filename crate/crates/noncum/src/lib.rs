//! Reinforcement learning and dynamic programming where the return is not a
//! discounted sum.
//!
//! The classical Bellman backup `Q(s,a) = E[r + gamma * max_a' Q(s',a')]` is a
//! special case of `Q(s,a) = E[g(r, gamma * max_a' Q(s',a'))]` for a binary
//! operation `g`. Swapping `g` changes the objective the induced policy
//! optimizes: `min` yields the bottleneck (widest-path) return, `max` the peak
//! reward, the harmonic combination a rate-of-parallel-resistors style return.
//!
//! What lives where:
//!
//! - [`op`]: the pluggable backup operation, its identity element, and
//!   randomized checkers for the two sufficient conditions (non-expansiveness
//!   in the second argument, which gives a contraction and a unique fixed
//!   point, and monotonicity, which makes the greedy policy optimal on
//!   deterministic problems).
//! - [`mdp`]: finite tabular MDPs with separate transition and reward
//!   supports, a plain-text interchange format, seeded random instance
//!   generators, and an episodic sampler.
//! - [`dp`]: synchronous generalized value iteration, exact policy evaluation
//!   by trajectory enumeration, and a brute-force trajectory optimizer used as
//!   an oracle in tests.
//! - [`tabular`]: tabular Q-learning under a pluggable backup and a
//!   Monte-Carlo bottleneck baseline.
//! - [`graph`]: max-bottleneck routing on directed graphs, both as an MDP
//!   reduction and as a Dijkstra-style oracle.
//! - [`wireless`]: an ad-hoc network simulator (ITU-1411 short-range path
//!   loss, SINR with co-band interference) where agents route flows and pick
//!   frequency bands.
//! - [`nn`]: a from-scratch dueling double-DQN stack (dense layers, Adam,
//!   uniform and prioritized replay) generic over the backup operation.
//! - [`cartpole`]: the classic cart-pole balancing task with both the usual
//!   +1-per-step reward and a bottleneck failure-penalty scheme.
//! - [`cli`]: the subcommands behind the `noncum` binary plus the CSV /
//!   checkpoint writers they share.
//!
//! Everything is deterministic given a root seed; see [`config::child_seed`]
//! for how per-component streams are derived.

pub mod cartpole;
pub mod cli;
pub mod config;
pub mod dp;
pub mod graph;
pub mod mdp;
pub mod nn;
pub mod op;
pub mod tabular;
pub mod wireless;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operand fell outside the backup operation's admissible domain.
    #[error("operation `{op}` got arguments outside its domain: g({r}, {x})")]
    DomainViolation { op: String, r: f64, x: f64 },

    /// Structurally invalid input (bad MDP, bad graph, bad schedule, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A plain-text artifact failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Exact enumeration would visit more trajectories than allowed.
    #[error("enumeration needs {required} trajectories, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    /// Iteration hit its cap before the residual dropped below tolerance.
    #[error("no convergence after {iterations} sweeps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A custom operation was used where a verified one is required.
    #[error(
        "operation `{0}` has not passed the condition checkers; verify it or opt in explicitly"
    )]
    Unverified(String),

    /// Checkpoint or batch shapes disagree with the network.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
