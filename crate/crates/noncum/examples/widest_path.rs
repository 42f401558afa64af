//! Cross-check the min-backup MDP solver against a label-setting widest-path
//! search on a batch of random DAGs.
//!
//! The two computations share nothing but the graph: one runs generalized
//! value iteration on the edge-as-action MDP, the other is a Dijkstra
//! variant ordered by path width. Agreement on the bottleneck value for
//! every instance is the point.

use noncum::graph::{random_dag, solve_qmin, widest_path_oracle};

fn main() {
    let instances = 100;
    let mut agree = 0;
    let mut shown = 0;
    for i in 0..instances {
        let g = random_dag(i, 12, 0.3);
        let (_, _, route) = solve_qmin(&g, 1.0).unwrap();
        let oracle = widest_path_oracle(&g).unwrap();
        if route.bottleneck == oracle.bottleneck {
            agree += 1;
        }
        if shown < 5 {
            println!(
                "graph {i:>3}: solver {} (width {}), oracle width {}",
                route.render(&g),
                route.bottleneck,
                oracle.bottleneck
            );
            shown += 1;
        }
    }
    println!("...");
    println!("{agree}/{instances} instances agree on the bottleneck value");
}
