//! Model-free tabular learning with a pluggable backup operation.
//!
//! Two trainers share the same exploration loop:
//!
//! * [`train_q_learning`] bootstraps each update through the operation,
//!   `Q(s,a) += alpha * (g(r, gamma * max_a' Q(s',a')) - Q(s,a))`. Under
//!   stochastic transitions it converges to the fixed point of the expected
//!   backup, which for non-additive operations is generally *not* the
//!   expected objective of any policy (see the counterexample test).
//! * [`train_q_mc`] regresses on full-episode targets instead: the tail of
//!   the recursive objective computed from observed rewards. It is unbiased
//!   for the behavior policy's return but higher variance.
//!
//! Both trainers are deterministic given their seed: behavior, environment,
//! and evaluation randomness come from separate child streams, so adding or
//! removing evaluation points never perturbs training.

use crate::config::{child_seed, child_seed_idx, rng_from_seed};
use crate::mdp::{TabularEnv, TabularMdp, Transition, ValueTable};
use crate::op::{fold_objective, GeneralizedOperator};
use crate::{Error, Result};

use rand::Rng;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub gamma: f64,
    pub alpha: f64,
    pub episodes: usize,
    /// Per-episode step cap; truncation bootstraps the tail from the table.
    pub max_steps: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Record a greedy-evaluation point every this many episodes (0 = never).
    pub eval_every: usize,
    /// Rollouts averaged per evaluation point.
    pub eval_episodes: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(gamma: f64, seed: u64) -> Self {
        TrainOptions {
            gamma,
            alpha: 0.1,
            episodes: 500,
            max_steps: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            eval_every: 0,
            eval_episodes: 1,
            seed,
        }
    }

    pub fn alpha(mut self, a: f64) -> Self {
        self.alpha = a;
        self
    }

    pub fn episodes(mut self, n: usize) -> Self {
        self.episodes = n;
        self
    }

    pub fn max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    pub fn epsilon(mut self, start: f64, end: f64) -> Self {
        self.epsilon_start = start;
        self.epsilon_end = end;
        self
    }

    pub fn eval(mut self, every: usize, episodes: usize) -> Self {
        self.eval_every = every;
        self.eval_episodes = episodes;
        self
    }

    fn epsilon_at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_end;
        }
        let f = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Episodes completed when the point was recorded.
    pub episode: usize,
    /// Greedy-policy objective from the start state.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub q: ValueTable,
    pub curve: Vec<CurvePoint>,
}

/// The one-step regression target `g(r, gamma * max_a' Q(s',a'))`, with the
/// operation's identity (unscaled) in place of the bootstrap when `next` is
/// terminal.
pub fn td_target(
    op: &GeneralizedOperator,
    q: &ValueTable,
    gamma: f64,
    t: &Transition,
) -> Result<f64> {
    let x = if t.terminal {
        op.identity()
    } else {
        gamma
            * q.max_value(t.next)
                .expect("non-terminal state with no valid action")
    };
    op.apply(t.reward, x)
}

/// One Q-learning update; returns the target it moved toward.
pub fn q_update(
    op: &GeneralizedOperator,
    q: &mut ValueTable,
    t: &Transition,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    let target = td_target(op, q, gamma, t)?;
    let old = q.get(t.state, t.action);
    q.set(t.state, t.action, old + alpha * (target - old));
    Ok(target)
}

fn epsilon_greedy(
    q: &ValueTable,
    mdp: &TabularMdp,
    s: usize,
    epsilon: f64,
    rng: &mut impl Rng,
) -> usize {
    if rng.random::<f64>() < epsilon {
        let k = mdp.n_valid_actions(s);
        let pick = rng.random_range(0..k);
        mdp.valid_actions(s).nth(pick).unwrap()
    } else {
        q.greedy_action(s)
            .expect("non-terminal state with no valid action")
    }
}

/// Objective of the table's greedy policy from `start`, averaged over
/// `episodes` sampled rollouts (one suffices on deterministic MDPs).
/// Episodes that hit `max_steps` contribute the fold of the rewards seen so
/// far.
pub fn evaluate_greedy(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    q: &ValueTable,
    start: usize,
    gamma: f64,
    max_steps: usize,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidInput(
            "evaluate_greedy needs at least one episode".into(),
        ));
    }
    let mut env = TabularEnv::new(mdp.clone(), start, seed)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset();
        let mut rewards = Vec::new();
        for _ in 0..max_steps {
            let a = q
                .greedy_action(env.state())
                .expect("non-terminal state with no valid action");
            let t = env.step(a)?;
            rewards.push(t.reward);
            if t.terminal {
                break;
            }
        }
        total += fold_objective(op, &rewards, gamma)?;
    }
    Ok(total / episodes as f64)
}

fn check_train_inputs(mdp: &TabularMdp, opts: &TrainOptions) -> Result<()> {
    mdp.validate()?;
    if !(opts.gamma > 0.0 && opts.gamma <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "gamma {} outside (0, 1]",
            opts.gamma
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha {} outside (0, 1]",
            opts.alpha
        )));
    }
    if opts.max_steps == 0 {
        return Err(Error::InvalidInput("max_steps must be positive".into()));
    }
    Ok(())
}

fn maybe_eval(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    q: &ValueTable,
    start: usize,
    opts: &TrainOptions,
    episode_done: usize,
    curve: &mut Vec<CurvePoint>,
) -> Result<()> {
    if opts.eval_every == 0 || episode_done % opts.eval_every != 0 {
        return Ok(());
    }
    let seed = child_seed_idx(opts.seed, "eval", curve.len() as u64);
    let objective = evaluate_greedy(
        mdp,
        op,
        q,
        start,
        opts.gamma,
        opts.max_steps,
        opts.eval_episodes,
        seed,
    )?;
    curve.push(CurvePoint {
        episode: episode_done,
        objective,
    });
    Ok(())
}

/// Epsilon-greedy Q-learning with the generalized one-step backup.
pub fn train_q_learning(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    start: usize,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    check_train_inputs(mdp, opts)?;
    let mut env = TabularEnv::new(mdp.clone(), start, child_seed(opts.seed, "env"))?;
    let mut rng = rng_from_seed(child_seed(opts.seed, "behavior"));
    let mut q = ValueTable::zeros(mdp);
    let mut curve = Vec::new();
    for ep in 0..opts.episodes {
        let epsilon = opts.epsilon_at(ep);
        env.reset();
        for _ in 0..opts.max_steps {
            let a = epsilon_greedy(&q, mdp, env.state(), epsilon, &mut rng);
            let t = env.step(a)?;
            q_update(op, &mut q, &t, opts.alpha, opts.gamma)?;
            if t.terminal {
                break;
            }
        }
        maybe_eval(mdp, op, &q, start, opts, ep + 1, &mut curve)?;
    }
    Ok(TrainResult { q, curve })
}

/// Monte-Carlo variant: every-visit updates toward the recursive objective
/// of the episode's remaining rewards,
/// `u_t = g(r_t, gamma * u_{t+1})`, base case `u_last = g(r_last, identity)`.
/// Episodes truncated by the step cap bootstrap the tail from the current
/// table; terminated episodes use observed rewards only, so the targets are
/// unbiased samples of the behavior policy's objective.
pub fn train_q_mc(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    start: usize,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    check_train_inputs(mdp, opts)?;
    let mut env = TabularEnv::new(mdp.clone(), start, child_seed(opts.seed, "env"))?;
    let mut rng = rng_from_seed(child_seed(opts.seed, "behavior"));
    let mut q = ValueTable::zeros(mdp);
    let mut curve = Vec::new();
    let mut episode: Vec<Transition> = Vec::new();
    for ep in 0..opts.episodes {
        let epsilon = opts.epsilon_at(ep);
        env.reset();
        episode.clear();
        for _ in 0..opts.max_steps {
            let a = epsilon_greedy(&q, mdp, env.state(), epsilon, &mut rng);
            let t = env.step(a)?;
            episode.push(t);
            if t.terminal {
                break;
            }
        }
        let last = episode.last().unwrap();
        let mut x = if last.terminal {
            op.identity()
        } else {
            opts.gamma
                * q.max_value(last.next)
                    .expect("non-terminal state with no valid action")
        };
        for t in episode.iter().rev() {
            let target = op.apply(t.reward, x)?;
            let old = q.get(t.state, t.action);
            q.set(t.state, t.action, old + opts.alpha * (target - old));
            x = opts.gamma * target;
        }
        maybe_eval(mdp, op, &q, start, opts, ep + 1, &mut curve)?;
    }
    Ok(TrainResult { q, curve })
}
