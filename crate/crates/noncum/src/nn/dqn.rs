//! Deep Q-learning with a pluggable backup operation.
//!
//! The regression target for a transition is
//! `g(r, gamma * Q_target(s', a*))` with `a*` chosen by the online network
//! (the double-estimator trick), the operation's identity replacing the
//! bootstrap at termination, and a pass-through `gamma * Q_target(s', a*)`
//! for transitions that carry no reward sample. A transition's successor is
//! a *set* of candidate observations (one per selectable band in the radio
//! environment, a single entry elsewhere); the maximisation runs jointly
//! over candidates and actions.

use rand::Rng;

use crate::cartpole::{episode_objective, CartPole, RewardScheme, N_ACTIONS, STATE_DIM};
use crate::config::{child_seed, child_seed_idx, rng_from_seed};
use crate::nn::mlp::{argmax, Adam, DuelingMlp, MlpSpec};
use crate::nn::replay::PrioritizedReplay;
use crate::op::GeneralizedOperator;
use crate::{Error, Result};

/// One stored experience. `next` holds the candidate observations the agent
/// chooses among on the following step; it is ignored when `done`.
#[derive(Debug, Clone)]
pub struct NnTransition {
    pub obs: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    /// `None` marks a step with no reward sample: the target is the pure
    /// discounted bootstrap. Terminal transitions must carry a reward.
    pub reward: Option<f64>,
    pub next: Vec<(Vec<f64>, Vec<bool>)>,
    pub done: bool,
}

/// Greedy argmax over a set of candidate observations; returns
/// `(candidate, action, value)`.
pub fn best_over_candidates(
    net: &DuelingMlp,
    candidates: &[(Vec<f64>, Vec<bool>)],
) -> (usize, usize, f64) {
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for (ci, (obs, mask)) in candidates.iter().enumerate() {
        let q = net.forward(obs, mask).q;
        let (a, v) = argmax(&q);
        if v > best.2 {
            best = (ci, a, v);
        }
    }
    best
}

/// Regression target for one transition.
pub fn td_target(
    op: &GeneralizedOperator,
    online: &DuelingMlp,
    target: &DuelingMlp,
    gamma: f64,
    t: &NnTransition,
) -> Result<f64> {
    let x = if t.done {
        op.identity()
    } else {
        if t.next.is_empty() {
            return Err(Error::InvalidInput(
                "non-terminal transition without successors".into(),
            ));
        }
        let (ci, a, _) = best_over_candidates(online, &t.next);
        let (obs, mask) = &t.next[ci];
        gamma * target.forward(obs, mask).q[a]
    };
    match t.reward {
        Some(r) => op.apply(r, x),
        None if t.done => Err(Error::InvalidInput(
            "terminal transition without a reward".into(),
        )),
        None => Ok(x),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchStats {
    pub mean_loss: f64,
    pub mean_target: f64,
}

/// Online network, frozen copy for targets, and the optimiser state.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub net: DuelingMlp,
    pub target: DuelingMlp,
    pub opt: Adam,
    pub grad_clip: f64,
    pub updates: usize,
}

impl DqnAgent {
    pub fn new(spec: MlpSpec, lr: f64, seed: u64) -> Self {
        let net = DuelingMlp::new(spec, &mut rng_from_seed(seed));
        let target = net.clone();
        let opt = Adam::new(&net, lr);
        DqnAgent {
            net,
            target,
            opt,
            grad_clip: 10.0,
            updates: 0,
        }
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.net);
    }

    /// One squared-error regression step on a batch; per-sample weights
    /// rescale the loss (importance weights), and `td_errors` receives the
    /// unweighted errors for priority refreshes.
    pub fn train_batch(
        &mut self,
        op: &GeneralizedOperator,
        gamma: f64,
        batch: &[&NnTransition],
        weights: Option<&[f64]>,
        td_errors: Option<&mut Vec<f64>>,
    ) -> Result<BatchStats> {
        assert!(!batch.is_empty());
        let targets: Vec<f64> = batch
            .iter()
            .map(|t| td_target(op, &self.net, &self.target, gamma, t))
            .collect::<Result<_>>()?;
        let mut grads = self.net.zero_grads();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let mut errors = Vec::with_capacity(batch.len());
        for (i, (t, y)) in batch.iter().zip(&targets).enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            let cache = self.net.forward(&t.obs, &t.mask);
            let e = cache.q[t.action] - y;
            errors.push(e);
            loss += 0.5 * w * e * e * scale;
            let mut dq = vec![0.0; t.mask.len()];
            dq[t.action] = w * e * scale;
            self.net.backward(&cache, &dq, &mut grads);
        }
        grads.clip_norm(self.grad_clip);
        self.opt.step(&mut self.net, &grads);
        self.updates += 1;
        if let Some(out) = td_errors {
            *out = errors;
        }
        Ok(BatchStats {
            mean_loss: loss,
            mean_target: targets.iter().sum::<f64>() / targets.len() as f64,
        })
    }
}

/// Linear anneal from `start` to `end` over `span` steps, clamped after.
pub fn anneal(start: f64, end: f64, span: usize, step: usize) -> f64 {
    if span == 0 || step >= span {
        return end;
    }
    start + (end - start) * step as f64 / span as f64
}

#[derive(Debug, Clone)]
pub struct CartPoleOptions {
    pub scheme: RewardScheme,
    pub gamma: f64,
    pub updates: usize,
    pub batch: usize,
    pub lr: f64,
    pub buffer_cap: usize,
    /// Environment steps collected before the first gradient update.
    pub warmup: usize,
    /// Updates between hard target-network syncs.
    pub target_sync: usize,
    /// Updates over which epsilon anneals from 1 to its floor.
    pub epsilon_span: usize,
    pub epsilon_end: f64,
    /// Updates between evaluation points (0 = final evaluation only).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Priority exponent; importance correction anneals to 1 over training.
    pub priority_alpha: f64,
    pub spec: MlpSpec,
    pub seed: u64,
}

impl CartPoleOptions {
    /// Balance-as-long-as-possible setup: zero reward while standing, -1 on
    /// the failing step, `min` backup, so the episode objective is
    /// `-gamma^(T-1)` and the optimum is to outlast the step cap.
    pub fn bottleneck(seed: u64) -> Self {
        CartPoleOptions {
            scheme: RewardScheme::FailurePenalty,
            gamma: 0.98,
            updates: 60_000,
            batch: 32,
            lr: 3e-4,
            buffer_cap: 50_000,
            warmup: 500,
            target_sync: 1_000,
            epsilon_span: 20_000,
            epsilon_end: 0.05,
            eval_every: 3_000,
            eval_episodes: 10,
            priority_alpha: 0.6,
            spec: MlpSpec::new(STATE_DIM, 64, 64, 32, N_ACTIONS),
            seed,
        }
    }

    /// Conventional cumulative setup for comparison runs.
    pub fn cumulative(seed: u64) -> Self {
        CartPoleOptions {
            scheme: RewardScheme::PerStep,
            gamma: 0.99,
            ..Self::bottleneck(seed)
        }
    }

    pub fn op(&self) -> GeneralizedOperator {
        match self.scheme {
            RewardScheme::PerStep => GeneralizedOperator::sum(),
            RewardScheme::FailurePenalty => GeneralizedOperator::min(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub update: usize,
    pub mean_length: f64,
    pub mean_objective: f64,
}

#[derive(Debug, Clone)]
pub struct CartPoleResult {
    pub net: DuelingMlp,
    pub curve: Vec<EvalPoint>,
}

/// Greedy-policy statistics over fresh episodes.
pub fn evaluate_cartpole(
    net: &DuelingMlp,
    scheme: RewardScheme,
    op: &GeneralizedOperator,
    gamma: f64,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut env = CartPole::new(seed);
    let mask = [true; N_ACTIONS];
    let mut total_len = 0usize;
    let mut total_obj = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        let failed = loop {
            let (a, _) = net.best_action(&obs, &mask);
            let out = env.step(a);
            obs = out.state;
            if out.done() {
                break out.failed;
            }
        };
        total_len += env.steps();
        total_obj += episode_objective(op, scheme, env.steps(), failed, gamma)?;
    }
    Ok((
        total_len as f64 / episodes as f64,
        total_obj / episodes as f64,
    ))
}

/// Dueling double-Q training on the cart-pole with prioritized replay. One
/// environment step per gradient update after warmup; evaluation runs on a
/// separate RNG stream so the curve never perturbs training. The returned
/// network is the checkpoint with the best evaluation length, not the last
/// one: late-training value estimates oscillate on this task, and selecting
/// on the held-out curve is the standard guard. The curve itself records
/// every checkpoint as measured.
pub fn train_cartpole(opts: &CartPoleOptions) -> Result<CartPoleResult> {
    let op = opts.op();
    let mut agent = DqnAgent::new(opts.spec, opts.lr, child_seed(opts.seed, "init"));
    let mut replay: PrioritizedReplay<NnTransition> =
        PrioritizedReplay::new(opts.buffer_cap, opts.priority_alpha);
    let mut env = CartPole::new(child_seed(opts.seed, "env"));
    let mut rng = rng_from_seed(child_seed(opts.seed, "behavior"));
    let mask = vec![true; N_ACTIONS];
    let mut curve = Vec::new();

    let mut obs: Vec<f64> = env.reset().to_vec();
    let step_env = |agent: &DqnAgent,
                    env: &mut CartPole,
                    obs: &mut Vec<f64>,
                    rng: &mut rand_chacha::ChaCha8Rng,
                    epsilon: f64,
                    replay: &mut PrioritizedReplay<NnTransition>| {
        let a = if rng.random::<f64>() < epsilon {
            rng.random_range(0..N_ACTIONS)
        } else {
            agent.net.best_action(obs, &mask).0
        };
        let out = env.step(a);
        let reward = opts.scheme.reward(out.failed);
        let t = NnTransition {
            obs: obs.clone(),
            mask: mask.clone(),
            action: a,
            reward: Some(reward),
            // A capped episode is not a failure state: bootstrap through it.
            next: vec![(out.state.to_vec(), mask.clone())],
            done: out.failed,
        };
        replay.push(t);
        *obs = if out.done() {
            env.reset().to_vec()
        } else {
            out.state.to_vec()
        };
    };

    for _ in 0..opts.warmup {
        step_env(&agent, &mut env, &mut obs, &mut rng, 1.0, &mut replay);
    }

    let mut eval_seed = 0u64;
    let mut best: Option<(f64, DuelingMlp)> = None;
    let mut record = |agent: &DqnAgent,
                      update: usize,
                      curve: &mut Vec<EvalPoint>,
                      best: &mut Option<(f64, DuelingMlp)>|
     -> Result<()> {
        let seed = child_seed_idx(opts.seed, "eval", eval_seed);
        eval_seed += 1;
        let (mean_length, mean_objective) = evaluate_cartpole(
            &agent.net,
            opts.scheme,
            &op,
            opts.gamma,
            opts.eval_episodes,
            seed,
        )?;
        curve.push(EvalPoint {
            update,
            mean_length,
            mean_objective,
        });
        if best.as_ref().is_none_or(|(len, _)| mean_length > *len) {
            *best = Some((mean_length, agent.net.clone()));
        }
        Ok(())
    };
    record(&agent, 0, &mut curve, &mut best)?;

    let mut errors = Vec::new();
    for update in 0..opts.updates {
        let epsilon = anneal(1.0, opts.epsilon_end, opts.epsilon_span, update);
        step_env(&agent, &mut env, &mut obs, &mut rng, epsilon, &mut replay);

        let beta = anneal(0.4, 1.0, opts.updates, update);
        let (indices, weights) = replay.sample(opts.batch, beta, &mut rng);
        let batch: Vec<&NnTransition> = indices.iter().map(|&i| replay.get(i)).collect();
        agent.train_batch(&op, opts.gamma, &batch, Some(&weights), Some(&mut errors))?;
        for (&i, &e) in indices.iter().zip(&errors) {
            replay.update_priority(i, e);
        }

        if (update + 1) % opts.target_sync == 0 {
            agent.sync_target();
        }
        if opts.eval_every != 0 && (update + 1) % opts.eval_every == 0 {
            record(&agent, update + 1, &mut curve, &mut best)?;
        }
    }
    if curve.last().map(|p| p.update) != Some(opts.updates) {
        record(&agent, opts.updates, &mut curve, &mut best)?;
    }
    Ok(CartPoleResult {
        net: best.expect("at least one evaluation ran").1,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> MlpSpec {
        MlpSpec::new(3, 8, 8, 6, 2)
    }

    fn transition(reward: Option<f64>, done: bool) -> NnTransition {
        NnTransition {
            obs: vec![0.1, -0.2, 0.3],
            mask: vec![true, true],
            action: 1,
            reward,
            next: if done {
                Vec::new()
            } else {
                vec![(vec![0.0, 0.1, -0.1], vec![true, true])]
            },
            done,
        }
    }

    #[test]
    fn terminal_target_is_the_reward_alone() {
        let agent = DqnAgent::new(tiny_spec(), 1e-3, 1);
        for op in [
            GeneralizedOperator::min(),
            GeneralizedOperator::sum(),
            GeneralizedOperator::max(),
        ] {
            let y = td_target(
                &op,
                &agent.net,
                &agent.target,
                0.9,
                &transition(Some(-1.0), true),
            )
            .unwrap();
            assert_eq!(y, -1.0, "{}", op.name());
        }
    }

    #[test]
    fn rewardless_target_is_the_discounted_bootstrap() {
        let agent = DqnAgent::new(tiny_spec(), 1e-3, 2);
        let t = transition(None, false);
        let y = td_target(
            &GeneralizedOperator::min(),
            &agent.net,
            &agent.target,
            0.9,
            &t,
        )
        .unwrap();
        let (ci, a, _) = best_over_candidates(&agent.net, &t.next);
        let q = agent.target.forward(&t.next[ci].0, &t.next[ci].1).q[a];
        assert_eq!(y, 0.9 * q);
    }

    #[test]
    fn rewardless_terminal_is_rejected() {
        let agent = DqnAgent::new(tiny_spec(), 1e-3, 3);
        assert!(td_target(
            &GeneralizedOperator::min(),
            &agent.net,
            &agent.target,
            0.9,
            &transition(None, true)
        )
        .is_err());
    }

    #[test]
    fn min_target_clips_at_the_reward() {
        // With a reward below any bootstrap the min target equals the reward.
        let agent = DqnAgent::new(tiny_spec(), 1e-3, 4);
        let t = transition(Some(-1e6), false);
        let y = td_target(
            &GeneralizedOperator::min(),
            &agent.net,
            &agent.target,
            0.9,
            &t,
        )
        .unwrap();
        assert_eq!(y, -1e6);
    }

    #[test]
    fn double_estimation_uses_online_argmax_target_value() {
        let mut agent = DqnAgent::new(tiny_spec(), 1e-3, 5);
        // Desynchronise the two networks, then check the composition.
        let t = transition(Some(0.5), false);
        let batch = [&t];
        agent
            .train_batch(&GeneralizedOperator::sum(), 0.9, &batch, None, None)
            .unwrap();
        let (ci, a, online_v) = best_over_candidates(&agent.net, &t.next);
        let target_v = agent.target.forward(&t.next[ci].0, &t.next[ci].1).q[a];
        assert_ne!(online_v, target_v);
        let y = td_target(
            &GeneralizedOperator::sum(),
            &agent.net,
            &agent.target,
            0.9,
            &t,
        )
        .unwrap();
        assert_eq!(y, 0.5 + 0.9 * target_v);
    }

    #[test]
    fn training_regresses_toward_fixed_targets() {
        let mut agent = DqnAgent::new(tiny_spec(), 3e-3, 6);
        let t = transition(Some(-1.0), true);
        let batch = [&t];
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            last = agent
                .train_batch(&GeneralizedOperator::min(), 0.9, &batch, None, None)
                .unwrap()
                .mean_loss;
        }
        assert!(last < 1e-6, "loss {last}");
        let q = agent.net.forward(&t.obs, &t.mask).q[t.action];
        assert!((q - -1.0).abs() < 1e-2);
    }

    #[test]
    fn network_targets_match_tabular_targets_on_embedded_states() {
        // One-hot state embeddings make the network a lookup table: reading
        // its outputs into a ValueTable must give bit-identical targets from
        // both target computations, for the additive and the min backup.
        use crate::mdp::{random_deterministic_mdp, Transition, ValueTable};
        use crate::tabular;

        let mdp = random_deterministic_mdp(13, 6, 3, false);
        let agent = DqnAgent::new(
            MlpSpec::new(mdp.n_states(), 10, 10, 7, mdp.n_actions()),
            1e-3,
            7,
        );
        let onehot = |s: usize| {
            let mut v = vec![0.0; mdp.n_states()];
            v[s] = 1.0;
            v
        };
        let mask = |s: usize| {
            (0..mdp.n_actions())
                .map(|a| mdp.kernel(s, a).is_some())
                .collect::<Vec<bool>>()
        };
        let mut table = ValueTable::zeros(&mdp);
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                continue;
            }
            let q = agent.net.forward(&onehot(s), &mask(s)).q;
            for a in mdp.valid_actions(s) {
                table.set(s, a, q[a]);
            }
        }
        for op in [GeneralizedOperator::sum(), GeneralizedOperator::min()] {
            for s in 0..mdp.n_states() {
                for a in mdp.valid_actions(s) {
                    let k = mdp.kernel(s, a).unwrap();
                    let (next, reward) = (k.next[0].0, k.reward[0].0);
                    let t = Transition {
                        state: s,
                        action: a,
                        reward,
                        next,
                        terminal: mdp.is_terminal(next),
                    };
                    let nn_t = NnTransition {
                        obs: onehot(s),
                        mask: mask(s),
                        action: a,
                        reward: Some(reward),
                        next: if t.terminal {
                            Vec::new()
                        } else {
                            vec![(onehot(next), mask(next))]
                        },
                        done: t.terminal,
                    };
                    let want = tabular::td_target(&op, &table, 0.9, &t).unwrap();
                    let got = td_target(&op, &agent.net, &agent.target, 0.9, &nn_t).unwrap();
                    assert_eq!(got, want, "{} at ({s},{a})", op.name());
                }
            }
        }
    }

    #[test]
    fn cartpole_training_smoke() {
        let mut opts = CartPoleOptions::bottleneck(1);
        opts.updates = 60;
        opts.warmup = 40;
        opts.batch = 8;
        opts.eval_every = 30;
        opts.eval_episodes = 2;
        opts.spec = MlpSpec::new(STATE_DIM, 12, 12, 8, N_ACTIONS);
        let out = train_cartpole(&opts).unwrap();
        assert_eq!(out.curve.first().unwrap().update, 0);
        assert_eq!(out.curve.last().unwrap().update, 60);
        assert!(out.curve.len() >= 3);
        for p in &out.curve {
            assert!(p.mean_objective <= 0.0 && p.mean_objective >= -1.0);
            assert!(p.mean_length >= 1.0);
        }
    }

    #[test]
    fn cartpole_training_is_deterministic_per_seed() {
        let mut opts = CartPoleOptions::bottleneck(9);
        opts.updates = 40;
        opts.warmup = 30;
        opts.batch = 4;
        opts.eval_every = 20;
        opts.eval_episodes = 1;
        opts.spec = MlpSpec::new(STATE_DIM, 10, 10, 6, N_ACTIONS);
        let a = train_cartpole(&opts).unwrap();
        let b = train_cartpole(&opts).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.net.flat_params(), b.net.flat_params());
    }
}
