//! Train a routing agent on small ad-hoc network scenes and compare it with
//! the random policy it started from.
//!
//! Each flow's agent hops toward its destination, choosing the next relay
//! and frequency band from local observations; the objective is the flow's
//! bottleneck link rate, so the min backup applies. This runs a heavily
//! shortened schedule on the desk-scale scene (one flow, two bands);
//! `noncum train-wireless` runs the full desk schedule and
//! `noncum eval-wireless` scores saved checkpoints.

use noncum::wireless::train::{
    evaluate_wireless, held_out_scenes, train_wireless, WirelessAlgo, WirelessOptions,
};

fn main() {
    let opts = WirelessOptions::desk(WirelessAlgo::QMin, 5)
        .scaled(0.1)
        .unwrap();
    println!(
        "training q-min for {} episodes ({} warmup, {} annealing, {} final)...",
        opts.total_episodes(),
        opts.warmup_episodes,
        opts.anneal_episodes,
        opts.final_episodes
    );
    let result = train_wireless(&opts).unwrap();

    println!(
        "    {:>8}  {:>8}  {:>10}  {:>10}  {:>9}",
        "episode", "updates", "bottleneck", "links/flow", "delivered"
    );
    for p in &result.curve {
        println!(
            "    {:>8}  {:>8}  {:>10.2}  {:>10.2}  {:>9.2}",
            p.episode, p.updates, p.mean_bottleneck_mbps, p.mean_links_per_flow, p.delivery_rate
        );
    }

    let scenes = held_out_scenes(&opts.scene, opts.eval_scenes, opts.seed).unwrap();
    let random = evaluate_wireless(&scenes, opts.hop_cap, None, 11).unwrap();
    let e = &result.final_eval;
    println!("\nover {} held-out scenes:", scenes.len());
    println!(
        "    random policy: {:.2} Mbps mean bottleneck, {:.2} links/flow, {:.0}% delivered",
        random.mean_bottleneck_mbps,
        random.mean_links_per_flow,
        100.0 * random.delivery_rate
    );
    println!(
        "    trained q-min: {:.2} Mbps mean bottleneck, {:.2} links/flow, {:.0}% delivered",
        e.mean_bottleneck_mbps,
        e.mean_links_per_flow,
        100.0 * e.delivery_rate
    );
}
