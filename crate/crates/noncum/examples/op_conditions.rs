//! Check the two convergence conditions on every built-in backup operation
//! and on a deliberately broken custom one.
//!
//! Non-expansiveness in the bootstrap argument makes the generalized Bellman
//! update a gamma-contraction (unique fixed point, value iteration
//! converges); monotonicity makes the greedy policy extracted from that
//! fixed point optimal on deterministic problems. The checkers sample the
//! operation's admissible domain and count violations.

use noncum::op::{fold_objective, Domain, GeneralizedOperator};

fn report(op: &mut GeneralizedOperator, samples: u64) {
    let (ne, mono) = op.verify(samples, 7);
    println!("{:>14}:", op.name());
    for r in [ne, mono] {
        println!(
            "    {:<15} {:>8} samples  {:>6} violations  worst margin {:+.3e}",
            r.condition, r.samples, r.violations, r.worst_margin
        );
    }
    println!("    verified: {}", op.is_verified());
}

fn main() {
    let samples = 200_000;
    for name in ["sum", "min", "max", "harmonic-mean"] {
        report(&mut GeneralizedOperator::by_name(name).unwrap(), samples);
    }

    // g(r, x) = 2x stretches distances in the bootstrap argument, so value
    // iteration under it can oscillate or diverge: the checker must say no.
    let mut doubling = GeneralizedOperator::custom("doubling", |_, x| 2.0 * x, 0.0, Domain::all());
    report(&mut doubling, samples);

    // The same reward sequence folds to a different objective under each
    // operation; this is the quantity the induced policies optimize.
    let rewards = [4.0, 2.0, 8.0];
    println!("\nfold of {rewards:?} at gamma = 1:");
    for name in ["sum", "min", "max", "harmonic-mean"] {
        let op = GeneralizedOperator::by_name(name).unwrap();
        println!(
            "    {:<14} {}",
            op.name(),
            fold_objective(&op, &rewards, 1.0).unwrap()
        );
    }
}
