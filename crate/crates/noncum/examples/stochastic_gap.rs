//! A two-step MDP where the min-backup fixed point overstates what any
//! policy actually achieves.
//!
//! The backup takes the expectation inside the min at every step, but the
//! objective is the expected min over whole trajectories. With a stochastic
//! reward those differ: E[min(a, R)] <= min(a, E[R]), strictly so when R
//! straddles a. The greedy policy extracted from the fixed point therefore
//! prefers a risky action whose true expected bottleneck is worse than the
//! safe alternative. On deterministic problems the expectation is vacuous
//! and no gap exists.

use noncum::cli::GAP_INSTANCE;
use noncum::dp::{
    best_policy_by_enumeration, evaluate_policy_exact, solve_fixed_point, SolveOptions,
};
use noncum::mdp::{greedy_policy, TabularMdp};
use noncum::op::GeneralizedOperator;

fn main() {
    print!("{GAP_INSTANCE}");
    let (mdp, gamma) = TabularMdp::from_text(GAP_INSTANCE).unwrap();
    let op = GeneralizedOperator::min();

    let solved = solve_fixed_point(&mdp, &op, &SolveOptions::new(gamma)).unwrap();
    println!(
        "\nfixed point: Q(0, safe) = {}, Q(0, risky) = {}",
        solved.q.get(0, 0),
        solved.q.get(0, 1)
    );

    let policy = greedy_policy(&solved.q);
    println!(
        "greedy action at state 0: {} (the risky one)",
        policy.actions[0].unwrap()
    );

    let exact = evaluate_policy_exact(&mdp, &policy, &op, gamma, 4, 1 << 20).unwrap()[0];
    println!("exact expected bottleneck of that policy: {exact}");
    println!(
        "gap between fixed point and reality: {}",
        solved.q.max_value(0).unwrap() - exact
    );

    let (best, pi) = best_policy_by_enumeration(&mdp, &op, gamma, 4, 0, 1 << 20, 1 << 20).unwrap();
    println!(
        "best deterministic policy achieves {best} by taking action {} instead",
        pi.actions[0].unwrap()
    );
}
