//! Subcommands behind the `noncum` binary.
//!
//! Every subcommand takes the same four flags: `--config` (flat `key =
//! value` file), `--out` (artifact directory), `--seed` (root seed,
//! overriding the config's `seed`), and `--scale` (multiplier on schedule
//! lengths, overriding `scale`). Identical config and seed produce
//! byte-identical artifacts: all randomness derives from the root seed and
//! floats print in shortest round-trip form. Artifacts are written
//! atomically (temp file, then rename) and every CSV opens with a header
//! row naming its columns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cartpole::random_policy_mean_length;
use crate::config::{child_seed, child_seed_idx, Config};
use crate::dp::{
    best_policy_by_enumeration, brute_force_optimal, evaluate_policy_exact, solve_fixed_point,
    SolveOptions,
};
use crate::graph::{reference_graph, solve_with, FlowGraph};
use crate::mdp::{greedy_policy, random_deterministic_mdp, TabularMdp};
use crate::nn::dqn::{train_cartpole, CartPoleOptions};
use crate::nn::mlp::DuelingMlp;
use crate::op::{check_monotone, check_nonexpansive, GeneralizedOperator, DEFAULT_VERIFY_SAMPLES};
use crate::wireless::env::DEFAULT_HOP_CAP;
use crate::wireless::train::{
    evaluate_wireless, held_out_scenes, train_wireless, wireless_spec, WirelessAlgo,
    WirelessOptions,
};
use crate::wireless::SceneConfig;
use crate::{Error, Result};

/// The stored two-step instance behind the `counterexample` subcommand.
pub const GAP_INSTANCE: &str = include_str!("../data/stochastic_gap.mdp");

#[derive(Debug, Parser)]
#[command(
    name = "noncum",
    version,
    about = "Dynamic programming and reinforcement learning with pluggable backup operations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample-check the non-expansiveness and monotonicity conditions of a
    /// built-in backup operation.
    OpCheck(RunArgs),
    /// Solve a routing graph (bundled reference graph by default), emitting
    /// the per-sweep value trace and the greedy route.
    SolveGraph(RunArgs),
    /// Compare greedy fixed-point policies against brute-force optima on
    /// batches of random deterministic MDPs.
    MdpOracle(RunArgs),
    /// Evaluate the stored stochastic instance whose min fixed point and
    /// exact expected minimum objective disagree.
    Counterexample(RunArgs),
    /// Train the cart-pole agent and emit its learning curve and checkpoint.
    TrainCartpole(RunArgs),
    /// Train one wireless routing algorithm and emit its learning curve and
    /// checkpoint.
    TrainWireless(RunArgs),
    /// Score a saved wireless checkpoint (or, without one, the random
    /// policy) on held-out scenes.
    EvalWireless(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory artifacts are written into (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Root seed; overrides the config's `seed` key.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Schedule-length multiplier; overrides the config's `scale` key.
    #[arg(long)]
    pub scale: Option<f64>,
}

/// Parse the process arguments and run; exits via clap on usage errors.
pub fn run() -> Result<()> {
    dispatch(Cli::parse())
}

/// Run from explicit arguments (the first is the binary name); usage errors
/// come back as values instead of exiting.
pub fn run_from<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidInput(e.to_string()))?;
    dispatch(cli)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::OpCheck(a) => op_check(&Ctx::prepare(a)?),
        Command::SolveGraph(a) => solve_graph(&Ctx::prepare(a)?),
        Command::MdpOracle(a) => mdp_oracle(&Ctx::prepare(a)?),
        Command::Counterexample(a) => counterexample(&Ctx::prepare(a)?),
        Command::TrainCartpole(a) => train_cartpole_cmd(&Ctx::prepare(a)?),
        Command::TrainWireless(a) => train_wireless_cmd(&Ctx::prepare(a)?),
        Command::EvalWireless(a) => eval_wireless_cmd(&Ctx::prepare(a)?),
    }
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
    seed: u64,
    scale: f64,
}

impl Ctx {
    fn prepare(args: &RunArgs) -> Result<Ctx> {
        let cfg = match &args.config {
            Some(p) => Config::from_path(p)?,
            None => Config::new(),
        };
        let seed = match args.seed {
            Some(s) => s,
            None => cfg.get_u64("seed", 0)?,
        };
        let scale = match args.scale {
            Some(s) => s,
            None => cfg.get_f64("scale", 1.0)?,
        };
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale must be positive, got {scale}"
            )));
        }
        fs::create_dir_all(&args.out)?;
        Ok(Ctx {
            cfg,
            out: args.out.clone(),
            seed,
            scale,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn scale_len(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        ((n as f64 * self.scale).round() as usize).max(1)
    }
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn operator_from(cfg: &Config, key: &str, default: &str) -> Result<GeneralizedOperator> {
    let name = cfg.get_str(key).unwrap_or(default);
    GeneralizedOperator::by_name(name).ok_or_else(|| {
        Error::InvalidInput(format!("config key `{key}`: unknown operation `{name}`"))
    })
}

fn op_check(ctx: &Ctx) -> Result<()> {
    let op = operator_from(&ctx.cfg, "op.name", "min")?;
    let samples = ctx.cfg.get_u64("op.samples", DEFAULT_VERIFY_SAMPLES)?;
    let reports = [
        check_nonexpansive(&op, samples, child_seed(ctx.seed, "non-expansive")),
        check_monotone(&op, samples, child_seed(ctx.seed, "monotone")),
    ];
    let mut csv = String::from("condition,operation,samples,violations,worst_margin,passed\n");
    for r in &reports {
        writeln!(
            csv,
            "{},{},{},{},{:?},{}",
            r.condition,
            op.name(),
            r.samples,
            r.violations,
            r.worst_margin,
            r.passed()
        )
        .unwrap();
        println!(
            "{} {}: {} violations in {} samples (worst margin {:?})",
            op.name(),
            r.condition,
            r.violations,
            r.samples,
            r.worst_margin
        );
    }
    write_atomic(&ctx.path("op_check.csv"), &csv)?;
    println!("wrote {}", ctx.path("op_check.csv").display());
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(Error::InvalidInput(format!(
            "operation `{}` violates the {} condition ({} violations)",
            op.name(),
            bad.condition,
            bad.violations
        )));
    }
    Ok(())
}

fn solve_graph(ctx: &Ctx) -> Result<()> {
    let g = match ctx.cfg.get_str("graph.file") {
        Some(p) => FlowGraph::parse(&fs::read_to_string(p)?)?,
        None => reference_graph(),
    };
    let op = operator_from(&ctx.cfg, "solve.op", "min")?;
    let gamma = ctx.cfg.get_f64("solve.gamma", 1.0)?;
    let tol = ctx.cfg.get_f64("solve.tol", 0.0)?;
    let (gm, result, route) = solve_with(&g, &op, gamma, tol)?;

    let mut csv = String::from("sweep");
    for label in &gm.labels {
        csv.push(',');
        csv.push_str(label);
    }
    csv.push('\n');
    for (i, row) in gm.trace_rows(&result).iter().enumerate() {
        write!(csv, "{i}").unwrap();
        for v in row {
            write!(csv, ",{v:?}").unwrap();
        }
        csv.push('\n');
    }
    write_atomic(&ctx.path("trace.csv"), &csv)?;

    let mut txt = String::new();
    writeln!(txt, "operation {}", op.name()).unwrap();
    writeln!(txt, "route {}", route.render(&g)).unwrap();
    writeln!(txt, "bottleneck {:?}", route.bottleneck).unwrap();
    writeln!(txt, "sweeps {}", result.iterations).unwrap();
    write_atomic(&ctx.path("route.txt"), &txt)?;

    println!(
        "{}: route {} (bottleneck {:?}) after {} sweeps",
        op.name(),
        route.render(&g),
        route.bottleneck,
        result.iterations
    );
    println!(
        "wrote {} and {}",
        ctx.path("trace.csv").display(),
        ctx.path("route.txt").display()
    );
    Ok(())
}

fn mdp_oracle(ctx: &Ctx) -> Result<()> {
    let instances = ctx.scale_len(ctx.cfg.get_usize("oracle.instances", 200)?);
    let max_states = ctx.cfg.get_usize("oracle.max_states", 8)?;
    let max_actions = ctx.cfg.get_usize("oracle.max_actions", 4)?;
    let names = ctx
        .cfg
        .get_str("oracle.ops")
        .unwrap_or("min,max,harmonic-mean");

    let mut csv = String::from("operation,instances,matches,max_abs_gap\n");
    let mut failures = 0usize;
    for name in names.split(',').map(str::trim) {
        let op = GeneralizedOperator::by_name(name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "config key `oracle.ops`: unknown operation `{name}`"
            ))
        })?;
        // Positive-domain operations get positive-reward instances (their
        // own seed stream); the rest share one stream.
        let positive = !op.domain().reward.contains(-1.0);
        let label = if positive {
            "oracle-positive"
        } else {
            "oracle"
        };
        let mut matches = 0usize;
        let mut max_gap = 0.0f64;
        for i in 0..instances {
            let mdp = random_deterministic_mdp(
                child_seed_idx(ctx.seed, label, i as u64),
                max_states,
                max_actions,
                positive,
            );
            let horizon = mdp.n_states();
            let solved = solve_fixed_point(&mdp, &op, &SolveOptions::new(1.0))?;
            let policy = greedy_policy(&solved.q);
            let got = evaluate_policy_exact(&mdp, &policy, &op, 1.0, horizon, 1 << 20)?[0];
            let (want, _) = brute_force_optimal(&mdp, &op, 1.0, horizon, 0)?;
            if got == want {
                matches += 1;
            }
            max_gap = max_gap.max((got - want).abs());
        }
        writeln!(csv, "{},{},{},{:?}", op.name(), instances, matches, max_gap).unwrap();
        println!(
            "{}: greedy matched the brute-force optimum on {matches}/{instances} instances (max gap {max_gap:?})",
            op.name()
        );
        failures += instances - matches;
    }
    write_atomic(&ctx.path("oracle.csv"), &csv)?;
    println!("wrote {}", ctx.path("oracle.csv").display());
    if failures > 0 {
        return Err(Error::InvalidInput(format!(
            "{failures} instances disagreed with the brute-force optimum"
        )));
    }
    Ok(())
}

fn counterexample(ctx: &Ctx) -> Result<()> {
    let text = match ctx.cfg.get_str("counterexample.file") {
        Some(p) => fs::read_to_string(p)?,
        None => GAP_INSTANCE.to_string(),
    };
    let (mdp, gamma) = TabularMdp::from_text(&text)?;
    let start = ctx.cfg.get_usize("counterexample.start", 0)?;
    let op = GeneralizedOperator::min();
    let solved = solve_fixed_point(&mdp, &op, &SolveOptions::new(gamma))?;
    let fixed = solved
        .q
        .max_value(start)
        .ok_or_else(|| Error::InvalidInput(format!("state {start} has no valid action")))?;
    let policy = greedy_policy(&solved.q);
    let horizon = mdp.n_states() + 1;
    let exact = evaluate_policy_exact(&mdp, &policy, &op, gamma, horizon, 1 << 20)?[start];
    let gap = (fixed - exact).abs();
    let (best, _) = best_policy_by_enumeration(&mdp, &op, gamma, horizon, start, 1 << 20, 1 << 20)?;

    let mut csv = String::from("quantity,value\n");
    writeln!(csv, "fixed_point_start_value,{fixed:?}").unwrap();
    writeln!(csv, "exact_expected_objective_of_greedy,{exact:?}").unwrap();
    writeln!(csv, "gap,{gap:?}").unwrap();
    writeln!(csv, "best_policy_expected_objective,{best:?}").unwrap();
    write_atomic(&ctx.path("counterexample.csv"), &csv)?;

    println!("fixed point values the start state at {fixed:?}");
    println!("exact expected objective of the greedy policy is {exact:?} (gap {gap:?})");
    println!("best policy by enumeration achieves {best:?}");
    println!("wrote {}", ctx.path("counterexample.csv").display());
    if gap <= 0.01 {
        return Err(Error::InvalidInput(format!(
            "expected a fixed-point vs exact-objective gap above 0.01, measured {gap:?}"
        )));
    }
    Ok(())
}

fn train_cartpole_cmd(ctx: &Ctx) -> Result<()> {
    let scheme = ctx.cfg.get_str("cartpole.scheme").unwrap_or("bottleneck");
    let mut opts = match scheme {
        "bottleneck" => CartPoleOptions::bottleneck(ctx.seed),
        "cumulative" => CartPoleOptions::cumulative(ctx.seed),
        other => {
            return Err(Error::InvalidInput(format!(
                "config key `cartpole.scheme`: `{other}` is not bottleneck or cumulative"
            )))
        }
    };
    opts.gamma = ctx.cfg.get_f64("cartpole.gamma", opts.gamma)?;
    opts.updates = ctx.cfg.get_usize("cartpole.updates", opts.updates)?;
    opts.batch = ctx.cfg.get_usize("cartpole.batch", opts.batch)?;
    opts.lr = ctx.cfg.get_f64("cartpole.lr", opts.lr)?;
    opts.buffer_cap = ctx.cfg.get_usize("cartpole.buffer", opts.buffer_cap)?;
    opts.warmup = ctx.cfg.get_usize("cartpole.warmup", opts.warmup)?;
    opts.target_sync = ctx
        .cfg
        .get_usize("cartpole.target_sync", opts.target_sync)?;
    opts.epsilon_span = ctx
        .cfg
        .get_usize("cartpole.epsilon_span", opts.epsilon_span)?;
    opts.epsilon_end = ctx.cfg.get_f64("cartpole.epsilon_end", opts.epsilon_end)?;
    opts.eval_every = ctx.cfg.get_usize("cartpole.eval_every", opts.eval_every)?;
    opts.eval_episodes = ctx
        .cfg
        .get_usize("cartpole.eval_episodes", opts.eval_episodes)?;
    opts.priority_alpha = ctx
        .cfg
        .get_f64("cartpole.priority_alpha", opts.priority_alpha)?;
    opts.updates = ctx.scale_len(opts.updates);
    opts.warmup = ctx.scale_len(opts.warmup);
    opts.epsilon_span = ctx.scale_len(opts.epsilon_span);
    opts.eval_every = ctx.scale_len(opts.eval_every);

    let result = train_cartpole(&opts)?;

    let mut csv = String::from("update,mean_length,mean_objective\n");
    for p in &result.curve {
        writeln!(
            csv,
            "{},{:?},{:?}",
            p.update, p.mean_length, p.mean_objective
        )
        .unwrap();
    }
    write_atomic(&ctx.path("cartpole_curve.csv"), &csv)?;
    result.net.save(&ctx.path("cartpole_net.bin"))?;

    let random = random_policy_mean_length(child_seed(ctx.seed, "random-baseline"), 25);
    let last = result.curve.last().unwrap();
    let mut txt = String::new();
    writeln!(txt, "scheme {scheme}").unwrap();
    writeln!(txt, "updates {}", opts.updates).unwrap();
    writeln!(txt, "final_mean_length {:?}", last.mean_length).unwrap();
    writeln!(txt, "final_mean_objective {:?}", last.mean_objective).unwrap();
    writeln!(txt, "random_policy_mean_length {random:?}").unwrap();
    write_atomic(&ctx.path("cartpole_summary.txt"), &txt)?;

    println!(
        "{scheme} cart-pole after {} updates: mean length {:?} (random policy {:?}), objective {:?}",
        opts.updates, last.mean_length, random, last.mean_objective
    );
    println!(
        "wrote {}, {}, {}",
        ctx.path("cartpole_curve.csv").display(),
        ctx.path("cartpole_net.bin").display(),
        ctx.path("cartpole_summary.txt").display()
    );
    Ok(())
}

fn scene_config_from(ctx: &Ctx) -> Result<SceneConfig> {
    let cfg = &ctx.cfg;
    let mut c = SceneConfig::desk();
    c.region_m = cfg.get_f64("scene.region_m", c.region_m)?;
    let counts = cfg.get_usize_list("scene.counts", &c.subregion_counts)?;
    if counts.len() != 9 {
        return Err(Error::InvalidInput(format!(
            "config key `scene.counts`: need exactly 9 values, got {}",
            counts.len()
        )));
    }
    c.subregion_counts.copy_from_slice(&counts);
    c.n_flows = cfg.get_usize("scene.flows", c.n_flows)?;
    c.n_bands = cfg.get_usize("scene.bands", c.n_bands)?;
    c.bandwidth_hz = cfg.get_f64("scene.bandwidth_hz", c.bandwidth_hz)?;
    c.carrier_hz = cfg.get_f64("scene.carrier_hz", c.carrier_hz)?;
    c.tx_power_dbm = cfg.get_f64("scene.tx_power_dbm", c.tx_power_dbm)?;
    c.noise_psd_dbm_hz = cfg.get_f64("scene.noise_psd_dbm_hz", c.noise_psd_dbm_hz)?;
    c.antenna_height_m = cfg.get_f64("scene.antenna_height_m", c.antenna_height_m)?;
    c.antenna_gain_dbi = cfg.get_f64("scene.antenna_gain_dbi", c.antenna_gain_dbi)?;
    c.neighbors = cfg.get_usize("scene.neighbors", c.neighbors)?;
    c.validate()?;
    Ok(c)
}

fn wireless_curve_csv(result: &crate::wireless::train::WirelessTrainResult) -> String {
    let mut csv =
        String::from("episode,updates,mean_bottleneck_mbps,mean_links_per_flow,delivery_rate\n");
    for p in &result.curve {
        writeln!(
            csv,
            "{},{},{:?},{:?},{:?}",
            p.episode, p.updates, p.mean_bottleneck_mbps, p.mean_links_per_flow, p.delivery_rate
        )
        .unwrap();
    }
    csv
}

fn train_wireless_cmd(ctx: &Ctx) -> Result<()> {
    let algo = WirelessAlgo::by_name(ctx.cfg.get_str("wireless.algo").unwrap_or("q-min"))?;
    let mut opts = WirelessOptions::desk(algo, ctx.seed);
    opts.scene = scene_config_from(ctx)?;
    let cfg = &ctx.cfg;
    opts.gamma = cfg.get_f64("train.gamma", opts.gamma)?;
    opts.hop_cap = cfg.get_usize("train.hop_cap", opts.hop_cap)?;
    opts.lr = cfg.get_f64("train.lr", opts.lr)?;
    opts.batch = cfg.get_usize("train.batch", opts.batch)?;
    opts.buffer_cap = cfg.get_usize("train.buffer", opts.buffer_cap)?;
    opts.target_sync = cfg.get_usize("train.target_sync", opts.target_sync)?;
    opts.reward_scale = cfg.get_f64("train.reward_scale", opts.reward_scale)?;
    opts.warmup_episodes = cfg.get_usize("train.warmup_episodes", opts.warmup_episodes)?;
    opts.anneal_episodes = cfg.get_usize("train.anneal_episodes", opts.anneal_episodes)?;
    opts.final_episodes = cfg.get_usize("train.final_episodes", opts.final_episodes)?;
    opts.epsilon_end = cfg.get_f64("train.epsilon_end", opts.epsilon_end)?;
    opts.updates_per_episode =
        cfg.get_usize("train.updates_per_episode", opts.updates_per_episode)?;
    opts.eval_every = cfg.get_usize("train.eval_every", opts.eval_every)?;
    opts.eval_scenes = cfg.get_usize("train.eval_scenes", opts.eval_scenes)?;
    let opts = opts.scaled(ctx.scale)?;

    let result = train_wireless(&opts)?;

    let curve_name = format!("wireless_curve_{}.csv", algo.name());
    let net_name = format!("wireless_net_{}.bin", algo.name());
    let summary_name = format!("wireless_summary_{}.txt", algo.name());
    write_atomic(&ctx.path(&curve_name), &wireless_curve_csv(&result))?;
    result.net.save(&ctx.path(&net_name))?;

    let e = &result.final_eval;
    let mut txt = String::new();
    writeln!(txt, "algorithm {}", algo.name()).unwrap();
    writeln!(txt, "episodes {}", opts.total_episodes()).unwrap();
    writeln!(
        txt,
        "updates {}",
        result.curve.last().map_or(0, |p| p.updates)
    )
    .unwrap();
    writeln!(txt, "held_out_scenes {}", opts.eval_scenes).unwrap();
    writeln!(txt, "mean_bottleneck_mbps {:?}", e.mean_bottleneck_mbps).unwrap();
    writeln!(txt, "mean_links_per_flow {:?}", e.mean_links_per_flow).unwrap();
    writeln!(txt, "delivery_rate {:?}", e.delivery_rate).unwrap();
    write_atomic(&ctx.path(&summary_name), &txt)?;

    println!(
        "{} after {} episodes: mean bottleneck {:?} Mbps, {:?} links/flow, delivery {:?}",
        algo.name(),
        opts.total_episodes(),
        e.mean_bottleneck_mbps,
        e.mean_links_per_flow,
        e.delivery_rate
    );
    println!(
        "wrote {}, {}, {}",
        ctx.path(&curve_name).display(),
        ctx.path(&net_name).display(),
        ctx.path(&summary_name).display()
    );
    Ok(())
}

fn eval_wireless_cmd(ctx: &Ctx) -> Result<()> {
    let scene_cfg = scene_config_from(ctx)?;
    let n_scenes = ctx.cfg.get_usize("eval.scenes", 200)?;
    let hop_cap = ctx.cfg.get_usize("eval.hop_cap", DEFAULT_HOP_CAP)?;
    let scenes = held_out_scenes(&scene_cfg, n_scenes, ctx.seed)?;
    let (net, policy) = match ctx.cfg.get_str("eval.net") {
        Some(p) => {
            let net = DuelingMlp::load(Path::new(p))?;
            let want = wireless_spec(scene_cfg.neighbors);
            if net.spec() != want {
                return Err(Error::ShapeMismatch {
                    expected: format!("{want:?}"),
                    got: format!("{:?}", net.spec()),
                });
            }
            (Some(net), "greedy")
        }
        None => (None, "random"),
    };
    let e = evaluate_wireless(&scenes, hop_cap, net.as_ref(), child_seed(ctx.seed, "eval"))?;

    let mut csv = String::from(
        "policy,scenes,flows,mean_bottleneck_mbps,mean_links_per_flow,delivery_rate\n",
    );
    writeln!(
        csv,
        "{},{},{},{:?},{:?},{:?}",
        policy,
        n_scenes,
        e.flow_bottlenecks_mbps.len(),
        e.mean_bottleneck_mbps,
        e.mean_links_per_flow,
        e.delivery_rate
    )
    .unwrap();
    write_atomic(&ctx.path("wireless_eval.csv"), &csv)?;

    let mut sorted = e.flow_bottlenecks_mbps.clone();
    sorted.sort_by(f64::total_cmp);
    let mut cdf = String::from("rank,cumulative_fraction,bottleneck_mbps\n");
    let n = sorted.len();
    for (i, v) in sorted.iter().enumerate() {
        writeln!(cdf, "{},{:?},{v:?}", i + 1, (i + 1) as f64 / n as f64).unwrap();
    }
    write_atomic(&ctx.path("rate_cdf.csv"), &cdf)?;

    println!(
        "{policy} policy over {n_scenes} scenes: mean bottleneck {:?} Mbps, {:?} links/flow, delivery {:?}",
        e.mean_bottleneck_mbps, e.mean_links_per_flow, e.delivery_rate
    );
    println!(
        "wrote {} and {}",
        ctx.path("wireless_eval.csv").display(),
        ctx.path("rate_cdf.csv").display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn args(parts: &[&str]) -> Vec<String> {
        std::iter::once("noncum".to_string())
            .chain(parts.iter().map(|s| s.to_string()))
            .collect()
    }

    #[test]
    fn gap_instance_parses_and_gaps() {
        let (mdp, gamma) = TabularMdp::from_text(GAP_INSTANCE).unwrap();
        assert_eq!(gamma, 1.0);
        assert_eq!(mdp.n_states(), 3);
        let dir = tempdir().unwrap();
        run_from(args(&[
            "counterexample",
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        let csv = fs::read_to_string(dir.path().join("counterexample.csv")).unwrap();
        assert!(csv.starts_with("quantity,value\n"));
        assert!(csv.contains("fixed_point_start_value,0.5"));
        assert!(csv.contains("gap,0.25"));
        assert!(csv.contains("best_policy_expected_objective,0.4"));
    }

    #[test]
    fn solve_graph_reproduces_the_reference_trace() {
        let dir = tempdir().unwrap();
        run_from(args(&[
            "solve-graph",
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        let mut lines = trace.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sweep,Q_{d->t},Q_{c->t},Q_{c->d},Q_{a->c},Q_{a->d},Q_{b->d},Q_{b->c},Q_{b->a},Q_{s->a},Q_{s->b}"
        );
        assert_eq!(
            lines.last().unwrap(),
            "4,5.0,3.0,4.0,4.0,5.0,3.0,4.0,5.0,4.0,5.0"
        );
        let route = fs::read_to_string(dir.path().join("route.txt")).unwrap();
        assert!(route.contains("route s -> b -> a -> d -> t"));
        assert!(route.contains("bottleneck 5.0"));
        assert!(route.contains("sweeps 4"));
    }

    #[test]
    fn op_check_reports_zero_violations_for_min() {
        let dir = tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "op.name = min\nop.samples = 20000\n").unwrap();
        run_from(args(&[
            "op-check",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        let csv = fs::read_to_string(dir.path().join("op_check.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "condition,operation,samples,violations,worst_margin,passed"
        );
        for line in lines {
            assert!(line.contains(",min,20000,0,"), "{line}");
            assert!(line.ends_with("true"));
        }
    }

    #[test]
    fn identical_config_and_seed_give_identical_bytes() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        for dir in [&a, &b] {
            run_from(args(&[
                "eval-wireless",
                "--out",
                dir.path().to_str().unwrap(),
                "--seed",
                "5",
            ]))
            .unwrap();
        }
        for name in ["wireless_eval.csv", "rate_cdf.csv"] {
            let left = fs::read(a.path().join(name)).unwrap();
            let right = fs::read(b.path().join(name)).unwrap();
            assert_eq!(left, right, "{name}");
        }
        let c = tempdir().unwrap();
        run_from(args(&[
            "eval-wireless",
            "--out",
            c.path().to_str().unwrap(),
            "--seed",
            "6",
        ]))
        .unwrap();
        assert_ne!(
            fs::read(a.path().join("rate_cdf.csv")).unwrap(),
            fs::read(c.path().join("rate_cdf.csv")).unwrap()
        );
    }

    #[test]
    fn eval_wireless_without_a_net_is_the_random_baseline() {
        let dir = tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "eval.scenes = 4\n").unwrap();
        run_from(args(&[
            "eval-wireless",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        let csv = fs::read_to_string(dir.path().join("wireless_eval.csv")).unwrap();
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("random,4,4,"));
        let cdf = fs::read_to_string(dir.path().join("rate_cdf.csv")).unwrap();
        assert_eq!(cdf.lines().count(), 5);
        assert_eq!(
            cdf.lines().nth(0).unwrap(),
            "rank,cumulative_fraction,bottleneck_mbps"
        );
        assert!(cdf.lines().last().unwrap().starts_with("4,1.0,"));
    }

    #[test]
    fn unknown_keys_and_values_are_reported() {
        let dir = tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "op.name = median\n").unwrap();
        let err = run_from(args(&[
            "op-check",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("op.name"));
        let err = run_from(args(&["no-such-command"])).unwrap_err();
        assert!(err.to_string().contains("no-such-command"));
    }

    #[test]
    fn mdp_oracle_small_batch_passes() {
        let dir = tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(
            &cfg,
            "oracle.instances = 12\noracle.max_states = 5\noracle.max_actions = 3\n",
        )
        .unwrap();
        run_from(args(&[
            "mdp-oracle",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]))
        .unwrap();
        let csv = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
        assert_eq!(
            csv.lines().next().unwrap(),
            "operation,instances,matches,max_abs_gap"
        );
        for line in csv.lines().skip(1) {
            assert!(line.contains(",12,12,"), "{line}");
        }
    }
}
