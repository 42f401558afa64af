//! Classic cart-pole balancing with a configurable reward shape.
//!
//! Physics, thresholds, and the uniform `[-0.05, 0.05]` start follow the
//! standard benchmark: a 1 kg cart, 0.1 kg pole of half-length 0.5 m,
//! 10 N bang-bang force, Euler integration at 20 ms, failure at 2.4 m of
//! track or 12 degrees of tilt, 500-step cap.
//!
//! Two reward shapes are provided. [`RewardScheme::PerStep`] pays +1 per
//! surviving step, the usual cumulative setup. [`RewardScheme::FailurePenalty`]
//! pays 0 everywhere except -1 on the failing step; combined with the `min`
//! backup the episode objective is `-gamma^(T-1)` for a failure at step `T`
//! and `0` for an episode that reaches the cap, so longer balancing is
//! strictly better and the optimum is to never fall.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::rng_from_seed;
use crate::op::{fold_objective, GeneralizedOperator};
use crate::Result;

pub const STATE_DIM: usize = 4;
pub const N_ACTIONS: usize = 2;
pub const STEP_CAP: usize = 500;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardScheme {
    PerStep,
    FailurePenalty,
}

impl RewardScheme {
    pub fn reward(&self, failed: bool) -> f64 {
        match self {
            RewardScheme::PerStep => 1.0,
            RewardScheme::FailurePenalty => {
                if failed {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub state: [f64; STATE_DIM],
    /// Pole or track limit exceeded on this step.
    pub failed: bool,
    /// Step cap reached without failure.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.failed || self.truncated
    }
}

#[derive(Debug, Clone)]
pub struct CartPole {
    state: [f64; STATE_DIM],
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl CartPole {
    pub fn new(seed: u64) -> Self {
        let mut env = CartPole {
            state: [0.0; STATE_DIM],
            steps: 0,
            done: true,
            rng: rng_from_seed(seed),
        };
        env.reset();
        env
    }

    pub fn reset(&mut self) -> [f64; STATE_DIM] {
        for v in &mut self.state {
            *v = self.rng.random_range(-0.05..0.05);
        }
        self.steps = 0;
        self.done = false;
        self.state
    }

    pub fn state(&self) -> [f64; STATE_DIM] {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    /// Advance one 20 ms step with action 0 (push left) or 1 (push right).
    pub fn step(&mut self, action: usize) -> StepOutcome {
        assert!(!self.done, "step on a finished episode");
        assert!(action < N_ACTIONS, "action {action} out of range");
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let cos = theta.cos();
        let sin = theta.sin();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.steps += 1;
        let failed = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let truncated = !failed && self.steps >= STEP_CAP;
        self.done = failed || truncated;
        StepOutcome {
            state: self.state,
            failed,
            truncated,
        }
    }
}

/// Objective of an episode under a reward scheme: the scheme's per-step
/// rewards folded through the operation.
pub fn episode_objective(
    op: &GeneralizedOperator,
    scheme: RewardScheme,
    length: usize,
    failed: bool,
    gamma: f64,
) -> Result<f64> {
    let rewards: Vec<f64> = (0..length)
        .map(|t| scheme.reward(failed && t + 1 == length))
        .collect();
    fold_objective(op, &rewards, gamma)
}

/// Mean episode length of the uniform-random policy; the reference point for
/// "does the learned controller balance at all".
pub fn random_policy_mean_length(seed: u64, episodes: usize) -> f64 {
    let mut env = CartPole::new(seed);
    let mut rng = rng_from_seed(crate::config::child_seed(seed, "actions"));
    let mut total = 0usize;
    for _ in 0..episodes {
        env.reset();
        loop {
            let out = env.step(rng.random_range(0..N_ACTIONS));
            if out.done() {
                break;
            }
        }
        total += env.steps();
    }
    total as f64 / episodes as f64
}
