//! Training loops for the routing environment: bootstrapped Q-learning
//! under a pluggable backup (min for the bottleneck objective, sum for the
//! cumulative baseline) and a Monte-Carlo variant that regresses directly
//! on folded episode returns. All three share one network architecture,
//! one initialisation per seed, and one evaluation protocol, so curves are
//! comparable across algorithms.

use crate::config::{child_seed, child_seed_idx, rng_from_seed};
use crate::nn::dqn::{anneal, DqnAgent, NnTransition};
use crate::nn::mlp::{DuelingMlp, MlpSpec};
use crate::nn::replay::ReplayBuffer;
use crate::op::GeneralizedOperator;
use crate::wireless::env::{run_episode, EpisodeOutcome, DEFAULT_HOP_CAP};
use crate::wireless::{generate_scene, SceneConfig, WirelessScene};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WirelessAlgo {
    /// Bootstrapped learning of the bottleneck value: `min(r, gamma max Q)`.
    QMin,
    /// Conventional cumulative baseline: `r + gamma max Q`.
    QSum,
    /// Monte-Carlo bottleneck returns regressed without bootstrapping.
    QMc,
}

impl WirelessAlgo {
    pub fn op(&self) -> GeneralizedOperator {
        match self {
            WirelessAlgo::QSum => GeneralizedOperator::sum(),
            _ => GeneralizedOperator::min(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WirelessAlgo::QMin => "q-min",
            WirelessAlgo::QSum => "q-sum",
            WirelessAlgo::QMc => "q-mc",
        }
    }

    pub fn by_name(name: &str) -> Result<WirelessAlgo> {
        match name {
            "q-min" => Ok(WirelessAlgo::QMin),
            "q-sum" => Ok(WirelessAlgo::QSum),
            "q-mc" => Ok(WirelessAlgo::QMc),
            other => Err(Error::InvalidInput(format!(
                "unknown algorithm `{other}` (expected q-min, q-sum, or q-mc)"
            ))),
        }
    }
}

/// The network shape is a function of the candidate count alone: `4c`
/// input features, trunk 150/150, streams 100, `c + 1` actions.
pub fn wireless_spec(neighbors: usize) -> MlpSpec {
    MlpSpec::new(4 * neighbors, 150, 150, 100, neighbors + 1)
}

#[derive(Debug, Clone)]
pub struct WirelessOptions {
    pub scene: SceneConfig,
    pub algo: WirelessAlgo,
    pub gamma: f64,
    pub hop_cap: usize,
    pub lr: f64,
    pub batch: usize,
    pub buffer_cap: usize,
    /// Gradient updates between hard target syncs (bootstrapped modes).
    pub target_sync: usize,
    /// Multiplies Mbps rewards into network units.
    pub reward_scale: f64,
    /// Episodes of uniform-random data collection before any update.
    pub warmup_episodes: usize,
    /// Episodes over which epsilon anneals from 1 to its floor.
    pub anneal_episodes: usize,
    /// Episodes run at the epsilon floor after annealing.
    pub final_episodes: usize,
    pub epsilon_end: f64,
    pub updates_per_episode: usize,
    /// Episodes between evaluation points (0 = endpoints only).
    pub eval_every: usize,
    /// Held-out scenes scored at every evaluation point.
    pub eval_scenes: usize,
    pub seed: u64,
}

impl WirelessOptions {
    /// Desk-scale defaults: the three schedule phases are 1/100 of the full
    /// experiment's layout counts.
    pub fn desk(algo: WirelessAlgo, seed: u64) -> Self {
        WirelessOptions {
            scene: SceneConfig::desk(),
            algo,
            gamma: 0.99,
            hop_cap: DEFAULT_HOP_CAP,
            lr: 3e-4,
            batch: 64,
            buffer_cap: 30_000,
            target_sync: 500,
            reward_scale: 0.05,
            warmup_episodes: 300,
            anneal_episodes: 3_000,
            final_episodes: 500,
            epsilon_end: 0.1,
            updates_per_episode: 2,
            eval_every: 250,
            eval_scenes: 200,
            seed,
        }
    }

    pub fn total_episodes(&self) -> usize {
        self.warmup_episodes + self.anneal_episodes + self.final_episodes
    }

    /// Multiply every schedule length by `scale` (minimum 1 episode each).
    pub fn scaled(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let grow = |n: usize| ((n as f64 * scale).round() as usize).max(1);
        self.warmup_episodes = grow(self.warmup_episodes);
        self.anneal_episodes = grow(self.anneal_episodes);
        self.final_episodes = grow(self.final_episodes);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "reward_scale must be positive, got {}",
                self.reward_scale
            )));
        }
        if self.batch == 0 || self.buffer_cap < self.batch || self.hop_cap == 0 {
            return Err(Error::InvalidInput(
                "batch, buffer, and hop cap must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::InvalidInput(format!(
                "epsilon_end must be in [0, 1], got {}",
                self.epsilon_end
            )));
        }
        if self.eval_scenes == 0 {
            return Err(Error::InvalidInput("eval_scenes must be positive".into()));
        }
        Ok(())
    }
}

/// Statistics of one policy over a fixed scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct WirelessEval {
    /// Mean per-flow bottleneck (Mbps; failed flows count as 0).
    pub mean_bottleneck_mbps: f64,
    pub mean_links_per_flow: f64,
    pub delivery_rate: f64,
    /// Every flow's bottleneck across all scenes, scene-major.
    pub flow_bottlenecks_mbps: Vec<f64>,
}

/// Score a policy over held-out scenes: greedy for a network, uniform
/// random when `net` is absent.
pub fn evaluate_wireless(
    scenes: &[WirelessScene],
    hop_cap: usize,
    net: Option<&DuelingMlp>,
    seed: u64,
) -> Result<WirelessEval> {
    if scenes.is_empty() {
        return Err(Error::InvalidInput("no evaluation scenes".into()));
    }
    let mut flow_bottlenecks = Vec::new();
    let mut links = 0.0;
    let mut delivered = 0usize;
    let mut flows = 0usize;
    for (i, scene) in scenes.iter().enumerate() {
        let mut rng = rng_from_seed(child_seed_idx(seed, "scene-episode", i as u64));
        let epsilon = if net.is_some() { 0.0 } else { 1.0 };
        let out = run_episode(scene, hop_cap, net, epsilon, &mut rng)?;
        flow_bottlenecks.extend_from_slice(&out.rewards.bottlenecks_mbps);
        links += out.links_per_flow * scene.flows.len() as f64;
        delivered += out.delivered;
        flows += scene.flows.len();
    }
    Ok(WirelessEval {
        mean_bottleneck_mbps: flow_bottlenecks.iter().sum::<f64>() / flows as f64,
        mean_links_per_flow: links / flows as f64,
        delivery_rate: delivered as f64 / flows as f64,
        flow_bottlenecks_mbps: flow_bottlenecks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WirelessCurvePoint {
    pub episode: usize,
    pub updates: usize,
    pub mean_bottleneck_mbps: f64,
    pub mean_links_per_flow: f64,
    pub delivery_rate: f64,
}

#[derive(Debug, Clone)]
pub struct WirelessTrainResult {
    pub net: DuelingMlp,
    pub curve: Vec<WirelessCurvePoint>,
    pub final_eval: WirelessEval,
}

/// Earliest recorded update count at which the curve reaches `threshold`
/// mean bottleneck rate.
pub fn first_reaching(curve: &[WirelessCurvePoint], threshold: f64) -> Option<usize> {
    curve
        .iter()
        .find(|p| p.mean_bottleneck_mbps >= threshold)
        .map(|p| p.updates)
}

#[derive(Debug, Clone)]
struct McSample {
    obs: Vec<f64>,
    mask: Vec<bool>,
    action: usize,
    target: f64,
}

/// Folded returns of one flow's transition sequence, backward: the tail
/// value behind the last transition is the operation's identity, rewardless
/// transitions pass the discounted tail through, and rewarded ones fold it
/// with `g`.
fn fold_returns(op: &GeneralizedOperator, gamma: f64, ts: &[NnTransition]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ts.len()];
    let mut tail: Option<f64> = None;
    for (i, t) in ts.iter().enumerate().rev() {
        let x = match tail {
            None => op.identity(),
            Some(g) => gamma * g,
        };
        let ret = match t.reward {
            Some(r) => op.apply(r, x)?,
            None if tail.is_none() => {
                return Err(Error::InvalidInput(
                    "terminal transition without a reward".into(),
                ))
            }
            None => x,
        };
        out[i] = ret;
        tail = Some(ret);
    }
    Ok(out)
}

fn supervised_step(agent: &mut DqnAgent, batch: &[&McSample]) -> f64 {
    let mut grads = agent.net.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let cache = agent.net.forward(&s.obs, &s.mask);
        let e = cache.q[s.action] - s.target;
        loss += 0.5 * e * e * scale;
        let mut dq = vec![0.0; s.mask.len()];
        dq[s.action] = e * scale;
        agent.net.backward(&cache, &dq, &mut grads);
    }
    grads.clip_norm(agent.grad_clip);
    agent.opt.step(&mut agent.net, &grads);
    agent.updates += 1;
    loss
}

/// Train one algorithm on freshly generated scenes. Training scenes come
/// from one seed stream and evaluation scenes from a disjoint one, so the
/// evaluation set is held out by construction.
pub fn train_wireless(opts: &WirelessOptions) -> Result<WirelessTrainResult> {
    opts.validate()?;
    let op = opts.algo.op();
    let mut agent = DqnAgent::new(
        wireless_spec(opts.scene.neighbors),
        opts.lr,
        child_seed(opts.seed, "init"),
    );
    let mut rng = rng_from_seed(child_seed(opts.seed, "behavior"));
    let eval_scenes: Vec<WirelessScene> = (0..opts.eval_scenes)
        .map(|i| {
            generate_scene(
                &opts.scene,
                child_seed_idx(opts.seed, "eval-scene", i as u64),
            )
        })
        .collect::<Result<_>>()?;

    let mut replay: ReplayBuffer<NnTransition> = ReplayBuffer::new(opts.buffer_cap);
    let mut mc_replay: ReplayBuffer<McSample> = ReplayBuffer::new(opts.buffer_cap);
    let mut curve = Vec::new();
    let mut eval_idx = 0u64;

    let record = |agent: &DqnAgent,
                  episode: usize,
                  eval_idx: &mut u64,
                  curve: &mut Vec<WirelessCurvePoint>|
     -> Result<()> {
        let seed = child_seed_idx(opts.seed, "eval", *eval_idx);
        *eval_idx += 1;
        let e = evaluate_wireless(&eval_scenes, opts.hop_cap, Some(&agent.net), seed)?;
        curve.push(WirelessCurvePoint {
            episode,
            updates: agent.updates,
            mean_bottleneck_mbps: e.mean_bottleneck_mbps,
            mean_links_per_flow: e.mean_links_per_flow,
            delivery_rate: e.delivery_rate,
        });
        Ok(())
    };
    record(&agent, 0, &mut eval_idx, &mut curve)?;

    for ep in 0..opts.total_episodes() {
        let scene = generate_scene(&opts.scene, child_seed_idx(opts.seed, "scene", ep as u64))?;
        let warm = ep < opts.warmup_episodes;
        let epsilon = if warm {
            1.0
        } else {
            anneal(
                1.0,
                opts.epsilon_end,
                opts.anneal_episodes,
                ep - opts.warmup_episodes,
            )
        };
        let out: EpisodeOutcome = run_episode(
            &scene,
            opts.hop_cap,
            if warm { None } else { Some(&agent.net) },
            epsilon,
            &mut rng,
        )?;
        for flow_ts in out.per_flow {
            if opts.algo == WirelessAlgo::QMc {
                let scaled: Vec<NnTransition> = flow_ts
                    .into_iter()
                    .map(|mut t| {
                        t.reward = t.reward.map(|r| r * opts.reward_scale);
                        t
                    })
                    .collect();
                let returns = fold_returns(&op, opts.gamma, &scaled)?;
                for (t, target) in scaled.into_iter().zip(returns) {
                    mc_replay.push(McSample {
                        obs: t.obs,
                        mask: t.mask,
                        action: t.action,
                        target,
                    });
                }
            } else {
                for mut t in flow_ts {
                    t.reward = t.reward.map(|r| r * opts.reward_scale);
                    replay.push(t);
                }
            }
        }

        if !warm {
            for _ in 0..opts.updates_per_episode {
                let loss = if opts.algo == WirelessAlgo::QMc {
                    let idx = mc_replay.sample_indices(opts.batch.min(mc_replay.len()), &mut rng);
                    let batch: Vec<&McSample> = idx.iter().map(|&i| mc_replay.get(i)).collect();
                    supervised_step(&mut agent, &batch)
                } else {
                    let idx = replay.sample_indices(opts.batch.min(replay.len()), &mut rng);
                    let batch: Vec<&NnTransition> = idx.iter().map(|&i| replay.get(i)).collect();
                    let stats = agent.train_batch(&op, opts.gamma, &batch, None, None)?;
                    if agent.updates % opts.target_sync == 0 {
                        agent.sync_target();
                    }
                    stats.mean_loss
                };
                if !loss.is_finite() {
                    return Err(Error::NoConvergence {
                        iterations: agent.updates,
                        residual: loss,
                    });
                }
            }
        }

        if opts.eval_every != 0 && (ep + 1) % opts.eval_every == 0 {
            record(&agent, ep + 1, &mut eval_idx, &mut curve)?;
        }
    }
    if curve.last().map(|p| p.episode) != Some(opts.total_episodes()) {
        record(&agent, opts.total_episodes(), &mut eval_idx, &mut curve)?;
    }

    let final_eval = evaluate_wireless(
        &eval_scenes,
        opts.hop_cap,
        Some(&agent.net),
        child_seed(opts.seed, "final-eval"),
    )?;
    Ok(WirelessTrainResult {
        net: agent.net,
        curve,
        final_eval,
    })
}

/// Fresh held-out scenes drawn from the same stream `train_wireless` uses,
/// for scoring saved networks outside a training run.
pub fn held_out_scenes(cfg: &SceneConfig, count: usize, seed: u64) -> Result<Vec<WirelessScene>> {
    (0..count)
        .map(|i| generate_scene(cfg, child_seed_idx(seed, "eval-scene", i as u64)))
        .collect()
}
