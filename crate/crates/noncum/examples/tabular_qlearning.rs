//! Learn widest-path routing model-free, two ways.
//!
//! Both agents explore the bundled routing graph epsilon-greedily. The
//! Q-learning agent bootstraps each update through the min backup; the
//! Monte-Carlo agent waits for the episode to finish and regresses on the
//! folded bottleneck of the observed rewards. On a deterministic graph both
//! reach the widest route; the bootstrapped one needs no full episodes to
//! start propagating values.

use noncum::graph::{reference_graph, widest_path_oracle};
use noncum::op::GeneralizedOperator;
use noncum::tabular::{train_q_learning, train_q_mc, TrainOptions};

fn main() {
    let g = reference_graph();
    let gm = g.as_mdp().unwrap();
    let op = GeneralizedOperator::min();
    let optimum = widest_path_oracle(&g).unwrap().bottleneck;

    let opts = TrainOptions::new(1.0, 3)
        .alpha(0.3)
        .episodes(800)
        .max_steps(20)
        .epsilon(1.0, 0.05)
        .eval(100, 1);

    let ql = train_q_learning(&gm.mdp, &op, g.source(), &opts).unwrap();
    let mc = train_q_mc(&gm.mdp, &op, g.source(), &opts).unwrap();

    println!("greedy bottleneck from the source, evaluated during training:");
    println!(
        "    {:>8}  {:>10}  {:>12}",
        "episode", "q-learning", "monte-carlo"
    );
    for (a, b) in ql.curve.iter().zip(&mc.curve) {
        println!(
            "    {:>8}  {:>10.1}  {:>12.1}",
            a.episode, a.objective, b.objective
        );
    }
    println!("widest-path optimum: {optimum}");

    println!("\nfinal q-learning values on the edges out of the source:");
    for ((s, a), label) in gm.edge_sa.iter().zip(&gm.labels) {
        if *s == g.source() {
            println!("    {label}: {:.2}", ql.q.get(*s, *a));
        }
    }
}
