//! Balance the cart-pole by maximizing the *worst* reward of the episode.
//!
//! Rewards are 0 on every standing step and -1 on the failing step, so the
//! objective under the min backup is -gamma^(T-1): strictly increasing in
//! the episode length T and 0 for an episode that outlasts the step cap.
//! Maximizing the bottleneck is therefore balancing. This runs a shortened
//! schedule; `noncum train-cartpole` runs the full one.

use noncum::cartpole::random_policy_mean_length;
use noncum::nn::dqn::{train_cartpole, CartPoleOptions};

fn main() {
    let mut opts = CartPoleOptions::bottleneck(1);
    opts.updates = 8_000;
    opts.epsilon_span = 4_000;
    opts.eval_every = 1_000;

    println!(
        "training for {} updates (min backup, failure penalty -1)...",
        opts.updates
    );
    let out = train_cartpole(&opts).unwrap();

    println!(
        "    {:>7}  {:>12}  {:>14}",
        "update", "mean length", "mean objective"
    );
    for p in &out.curve {
        println!(
            "    {:>7}  {:>12.1}  {:>14.4}",
            p.update, p.mean_length, p.mean_objective
        );
    }

    let random = random_policy_mean_length(99, 25);
    let last = out.curve.last().unwrap();
    println!("random policy baseline: {random:.1} steps");
    println!(
        "learned policy: {:.1} steps ({:.0}x the baseline)",
        last.mean_length,
        last.mean_length / random
    );
}
