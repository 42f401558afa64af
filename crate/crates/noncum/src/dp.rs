//! Dynamic programming under a pluggable backup operation.
//!
//! The central object is the synchronous sweep
//! `Q'(s,a) = E[ g(r, gamma * max_a' Q(s', a')) ]`, with terminal successors
//! bootstrapped by the operation's identity element so that `Q'(s,a) = E[r]`
//! on transitions into terminal states. For a non-expansive `g` the sweep is a
//! gamma-contraction in the sup norm, so iterating it from any table converges
//! to the unique fixed point; [`solve_fixed_point`] does exactly that and
//! keeps the per-sweep trace.
//!
//! Two oracles live here as well. [`evaluate_policy_exact`] computes the
//! exact expected episode objective of a fixed policy by enumerating every
//! trajectory up to a horizon, and [`brute_force_optimal`] maximizes the
//! objective over action sequences on deterministic MDPs. They share no code
//! with the sweeps on purpose: tests compare the two routes against each
//! other.
//!
//! A note on stochastic problems: the fixed point of the sweep applies the
//! expectation inside each backup step, while the episode objective folds the
//! whole reward sequence before taking the expectation. For non-linear `g`
//! these differ, and the greedy policy induced by the fixed point can be
//! strictly worse than the best deterministic policy. See the
//! `counterexample` subcommand and `data/stochastic_gap.mdp` for a two-step
//! instance exhibiting the gap; on deterministic MDPs the expectation is
//! vacuous and greedy is optimal (which the test suite checks exhaustively).

use crate::mdp::{Policy, TabularMdp, ValueTable};
use crate::op::{fold_objective, GeneralizedOperator};
use crate::{Error, Result};

/// Default residual tolerance for [`solve_fixed_point`].
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default trajectory budget for [`evaluate_policy_exact`].
pub const DEFAULT_ENUM_BUDGET: u128 = 2_000_000;

/// Options for [`solve_fixed_point`] and [`solve_policy`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub gamma: f64,
    /// Stop once a sweep moves the table by at most this much (sup norm).
    pub tol: f64,
    pub max_iters: usize,
    /// Accept operations that have not passed the condition checkers.
    pub allow_unverified: bool,
    /// Record the table after every sweep (the iteration trace).
    pub record_trace: bool,
    /// Start table; defaults to all zeros over the valid pairs.
    pub init: Option<ValueTable>,
}

impl SolveOptions {
    pub fn new(gamma: f64) -> Self {
        SolveOptions {
            gamma,
            tol: DEFAULT_TOL,
            max_iters: 10_000,
            allow_unverified: false,
            record_trace: true,
            init: None,
        }
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn allow_unverified(mut self) -> Self {
        self.allow_unverified = true;
        self
    }

    pub fn init(mut self, q: ValueTable) -> Self {
        self.init = Some(q);
        self
    }
}

/// Outcome of an iterative solve.
///
/// `iterations` counts the sweeps that moved the table by more than `tol`;
/// the verification sweep that detected convergence is neither counted nor
/// recorded. `trace` holds rows `0..=iterations` (initial table included)
/// when tracing is on.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub q: ValueTable,
    pub iterations: usize,
    pub residual: f64,
    pub trace: Vec<ValueTable>,
}

fn bootstrap(
    q: &ValueTable,
    mdp: &TabularMdp,
    s_next: usize,
    gamma: f64,
    op: &GeneralizedOperator,
) -> f64 {
    if mdp.is_terminal(s_next) {
        // Not scaled by gamma: the identity must reach `g` unchanged.
        op.identity()
    } else {
        gamma
            * q.max_value(s_next)
                .expect("non-terminal state with no valid action")
    }
}

/// One synchronous sweep of the greedy backup over every valid pair.
pub fn sweep_greedy(
    mdp: &TabularMdp,
    q: &ValueTable,
    op: &GeneralizedOperator,
    gamma: f64,
) -> Result<ValueTable> {
    let mut out = q.clone();
    for s in 0..mdp.n_states() {
        for a in mdp.valid_actions(s) {
            let k = mdp.kernel(s, a).unwrap();
            let mut acc = 0.0;
            for &(s_next, p_next) in &k.next {
                let x = bootstrap(q, mdp, s_next, gamma, op);
                for &(r, p_r) in &k.reward {
                    acc += p_next * p_r * op.apply(r, x)?;
                }
            }
            out.set(s, a, acc);
        }
    }
    Ok(out)
}

/// One synchronous policy-evaluation sweep:
/// `Q'(s,a) = E[ g(r, gamma * Q(s', pi(s'))) ]`.
pub fn sweep_policy(
    mdp: &TabularMdp,
    q: &ValueTable,
    policy: &Policy,
    op: &GeneralizedOperator,
    gamma: f64,
) -> Result<ValueTable> {
    policy.validate(mdp)?;
    let mut out = q.clone();
    for s in 0..mdp.n_states() {
        for a in mdp.valid_actions(s) {
            let k = mdp.kernel(s, a).unwrap();
            let mut acc = 0.0;
            for &(s_next, p_next) in &k.next {
                let x = if mdp.is_terminal(s_next) {
                    op.identity()
                } else {
                    gamma * q.get(s_next, policy.actions[s_next].unwrap())
                };
                for &(r, p_r) in &k.reward {
                    acc += p_next * p_r * op.apply(r, x)?;
                }
            }
            out.set(s, a, acc);
        }
    }
    Ok(out)
}

fn check_solve_inputs(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    opts: &SolveOptions,
) -> Result<()> {
    mdp.validate()?;
    if !op.is_verified() && !opts.allow_unverified {
        return Err(Error::Unverified(op.name().to_string()));
    }
    if !(opts.gamma > 0.0 && opts.gamma <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "gamma {} outside (0, 1]",
            opts.gamma
        )));
    }
    if opts.gamma == 1.0 && !mdp.proven_terminating() {
        return Err(Error::InvalidInput(
            "gamma = 1 requires a proven-terminating MDP (acyclic over non-terminal states)".into(),
        ));
    }
    Ok(())
}

fn iterate(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    opts: &SolveOptions,
    step: impl Fn(&ValueTable) -> Result<ValueTable>,
) -> Result<SolveResult> {
    check_solve_inputs(mdp, op, opts)?;
    let mut q = opts.init.clone().unwrap_or_else(|| ValueTable::zeros(mdp));
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(q.clone());
    }
    let mut residual = f64::INFINITY;
    for k in 1..=opts.max_iters {
        let next = step(&q)?;
        residual = next.sup_dist(&q);
        if residual <= opts.tol {
            return Ok(SolveResult {
                q: next,
                iterations: k - 1,
                residual,
                trace,
            });
        }
        if opts.record_trace {
            trace.push(next.clone());
        }
        q = next;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        residual,
    })
}

/// Iterate [`sweep_greedy`] from the initial table until a sweep moves it by
/// at most `opts.tol`. Discount 1 is rejected unless the MDP is proven
/// terminating; unverified operations are rejected unless opted in.
pub fn solve_fixed_point(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    iterate(mdp, op, opts, |q| sweep_greedy(mdp, q, op, opts.gamma))
}

/// Iterate [`sweep_policy`] to the policy's value table.
pub fn solve_policy(
    mdp: &TabularMdp,
    policy: &Policy,
    op: &GeneralizedOperator,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    iterate(mdp, op, opts, |q| {
        sweep_policy(mdp, q, policy, op, opts.gamma)
    })
}

/// Count the trajectories the exact evaluator would enumerate.
fn trajectory_count(mdp: &TabularMdp, policy: &Policy, start: usize, horizon: usize) -> u128 {
    // counts[s] at loop entry: trajectories from s with d steps remaining.
    let mut counts = vec![1u128; mdp.n_states()];
    for _ in 0..horizon {
        let mut next_counts = vec![1u128; mdp.n_states()];
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                next_counts[s] = 1;
                continue;
            }
            let k = mdp.kernel(s, policy.actions[s].unwrap()).unwrap();
            let mut total: u128 = 0;
            for &(t, _) in &k.next {
                total = total.saturating_add(counts[t]);
            }
            next_counts[s] = total.saturating_mul(k.reward.len() as u128);
        }
        counts = next_counts;
    }
    counts[start]
}

/// Exact expected episode objective of `policy` from every start state, by
/// full trajectory enumeration up to `horizon` steps. Terminal start states
/// report 0. Trajectories still running at the horizon contribute the fold of
/// the rewards collected so far (for gamma < 1 the truncation error is
/// bounded by the operation's sensitivity to a `gamma^horizon`-scaled tail).
///
/// Fails with [`Error::BudgetExceeded`] if any start state needs more than
/// `budget` trajectories.
pub fn evaluate_policy_exact(
    mdp: &TabularMdp,
    policy: &Policy,
    op: &GeneralizedOperator,
    gamma: f64,
    horizon: usize,
    budget: u128,
) -> Result<Vec<f64>> {
    mdp.validate()?;
    policy.validate(mdp)?;
    let mut values = vec![0.0; mdp.n_states()];
    for start in 0..mdp.n_states() {
        if mdp.is_terminal(start) {
            continue;
        }
        let required = trajectory_count(mdp, policy, start, horizon);
        if required > budget {
            return Err(Error::BudgetExceeded { required, budget });
        }
        let mut acc = 0.0;
        let mut prefix: Vec<f64> = Vec::with_capacity(horizon);
        enumerate(
            mdp,
            policy,
            op,
            gamma,
            horizon,
            start,
            1.0,
            &mut prefix,
            &mut acc,
        )?;
        values[start] = acc;
    }
    Ok(values)
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    mdp: &TabularMdp,
    policy: &Policy,
    op: &GeneralizedOperator,
    gamma: f64,
    steps_left: usize,
    s: usize,
    prob: f64,
    prefix: &mut Vec<f64>,
    acc: &mut f64,
) -> Result<()> {
    if mdp.is_terminal(s) || steps_left == 0 {
        *acc += prob * fold_objective(op, prefix, gamma)?;
        return Ok(());
    }
    let k = mdp.kernel(s, policy.actions[s].unwrap()).unwrap();
    for &(r, p_r) in &k.reward {
        prefix.push(r);
        for &(t, p_t) in &k.next {
            enumerate(
                mdp,
                policy,
                op,
                gamma,
                steps_left - 1,
                t,
                prob * p_r * p_t,
                prefix,
                acc,
            )?;
        }
        prefix.pop();
    }
    Ok(())
}

/// Maximize the episode objective over action sequences from `start` on a
/// deterministic MDP. Returns the best objective and a policy that plays the
/// best sequence (states off that trajectory get their lowest valid action).
///
/// Ties go to the lexicographically smallest action sequence. Trajectories
/// truncated at `horizon` contribute the fold of their prefix.
pub fn brute_force_optimal(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    gamma: f64,
    horizon: usize,
    start: usize,
) -> Result<(f64, Policy)> {
    mdp.validate()?;
    if !mdp.is_deterministic() {
        return Err(Error::InvalidInput(
            "brute-force trajectory search requires a deterministic MDP".into(),
        ));
    }
    if mdp.is_terminal(start) {
        return Err(Error::InvalidInput("start state is terminal".into()));
    }
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    let mut rewards = Vec::with_capacity(horizon);
    let mut visited = Vec::with_capacity(horizon);
    search(
        mdp,
        op,
        gamma,
        horizon,
        start,
        &mut rewards,
        &mut visited,
        &mut best,
    )?;
    let (value, choices) = best.ok_or_else(|| {
        Error::InvalidInput("no terminating trajectory within the horizon".into())
    })?;
    let mut actions: Vec<Option<usize>> = (0..mdp.n_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                None
            } else {
                mdp.valid_actions(s).next()
            }
        })
        .collect();
    for (s, a) in choices {
        actions[s] = Some(a);
    }
    Ok((value, Policy { actions }))
}

#[allow(clippy::too_many_arguments)]
fn search(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    gamma: f64,
    steps_left: usize,
    s: usize,
    rewards: &mut Vec<f64>,
    visited: &mut Vec<(usize, usize)>,
    best: &mut Option<(f64, Vec<(usize, usize)>)>,
) -> Result<()> {
    if mdp.is_terminal(s) || steps_left == 0 {
        let value = fold_objective(op, rewards, gamma)?;
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            *best = Some((value, visited.clone()));
        }
        return Ok(());
    }
    for a in mdp.valid_actions(s) {
        let k = mdp.kernel(s, a).unwrap();
        let (next, reward) = (k.next[0].0, k.reward[0].0);
        rewards.push(reward);
        visited.push((s, a));
        search(mdp, op, gamma, steps_left - 1, next, rewards, visited, best)?;
        visited.pop();
        rewards.pop();
    }
    Ok(())
}

/// Maximize the exact expected objective over all deterministic policies by
/// enumeration (works on stochastic MDPs, unlike [`brute_force_optimal`]).
/// `policy_budget` caps the number of policies; the trajectory budget applies
/// per policy.
pub fn best_policy_by_enumeration(
    mdp: &TabularMdp,
    op: &GeneralizedOperator,
    gamma: f64,
    horizon: usize,
    start: usize,
    policy_budget: u128,
    traj_budget: u128,
) -> Result<(f64, Policy)> {
    mdp.validate()?;
    let free_states: Vec<usize> = (0..mdp.n_states())
        .filter(|&s| !mdp.is_terminal(s))
        .collect();
    let mut n_policies: u128 = 1;
    for &s in &free_states {
        n_policies = n_policies.saturating_mul(mdp.n_valid_actions(s) as u128);
    }
    if n_policies > policy_budget {
        return Err(Error::BudgetExceeded {
            required: n_policies,
            budget: policy_budget,
        });
    }
    let mut best: Option<(f64, Policy)> = None;
    let mut choice: Vec<usize> = free_states
        .iter()
        .map(|&s| mdp.valid_actions(s).next().unwrap())
        .collect();
    loop {
        let mut actions: Vec<Option<usize>> = vec![None; mdp.n_states()];
        for (i, &s) in free_states.iter().enumerate() {
            actions[s] = Some(choice[i]);
        }
        let policy = Policy { actions };
        let value = evaluate_policy_exact(mdp, &policy, op, gamma, horizon, traj_budget)?[start];
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, policy));
        }
        // Advance the mixed-radix counter over valid actions.
        let mut i = 0;
        loop {
            if i == free_states.len() {
                return Ok(best.unwrap());
            }
            let valids: Vec<usize> = mdp.valid_actions(free_states[i]).collect();
            let pos = valids.iter().position(|&a| a == choice[i]).unwrap();
            if pos + 1 < valids.len() {
                choice[i] = valids[pos + 1];
                break;
            }
            choice[i] = valids[0];
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{greedy_policy, random_deterministic_mdp, random_stochastic_mdp, Kernel};
    use crate::op::GeneralizedOperator;

    fn chain() -> TabularMdp {
        // 0 --(r=2)--> 1 --(r=3)--> 2(terminal)
        let mut m = TabularMdp::new(3, 1);
        m.set_terminal(2);
        m.set_kernel(0, 0, Kernel::deterministic(1, 2.0));
        m.set_kernel(1, 0, Kernel::deterministic(2, 3.0));
        m
    }

    #[test]
    fn chain_fixed_points_match_hand_values() {
        let m = chain();
        let min = solve_fixed_point(
            &m,
            &GeneralizedOperator::min(),
            &SolveOptions::new(1.0).tol(0.0),
        )
        .unwrap();
        assert_eq!(min.q.get(1, 0), 3.0);
        assert_eq!(min.q.get(0, 0), 2.0);

        let sum = solve_fixed_point(
            &m,
            &GeneralizedOperator::sum(),
            &SolveOptions::new(0.5).tol(0.0),
        )
        .unwrap();
        assert_eq!(sum.q.get(1, 0), 3.0);
        assert_eq!(sum.q.get(0, 0), 3.5);

        let harm = solve_fixed_point(
            &m,
            &GeneralizedOperator::harmonic_mean(),
            &SolveOptions::new(1.0).tol(0.0),
        )
        .unwrap();
        assert_eq!(harm.q.get(1, 0), 3.0);
        assert_eq!(harm.q.get(0, 0), 1.0 / (1.0 / 2.0 + 1.0 / 3.0));
    }

    #[test]
    fn iteration_count_excludes_the_verification_sweep() {
        // Values propagate one more level per sweep; depth-2 chain needs 2.
        let m = chain();
        let r = solve_fixed_point(
            &m,
            &GeneralizedOperator::min(),
            &SolveOptions::new(1.0).tol(0.0),
        )
        .unwrap();
        assert_eq!(r.iterations, 2);
        assert_eq!(r.trace.len(), 3);
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.trace[2], r.q);
    }

    #[test]
    fn sweep_on_the_fixed_point_is_identity() {
        let m = chain();
        let op = GeneralizedOperator::min();
        let r = solve_fixed_point(&m, &op, &SolveOptions::new(1.0).tol(0.0)).unwrap();
        let again = sweep_greedy(&m, &r.q, &op, 1.0).unwrap();
        assert_eq!(again, r.q);
        // And solving from the fixed point reports zero iterations.
        let r2 =
            solve_fixed_point(&m, &op, &SolveOptions::new(1.0).tol(0.0).init(r.q.clone())).unwrap();
        assert_eq!(r2.iterations, 0);
        assert_eq!(r2.trace.len(), 1);
    }

    #[test]
    fn gamma_one_requires_termination() {
        let mut m = TabularMdp::new(3, 2);
        m.set_terminal(2);
        m.set_kernel(0, 0, Kernel::deterministic(1, 1.0));
        m.set_kernel(1, 0, Kernel::deterministic(0, 1.0)); // cycle 0 <-> 1
        m.set_kernel(1, 1, Kernel::deterministic(2, 1.0));
        let err = solve_fixed_point(&m, &GeneralizedOperator::min(), &SolveOptions::new(1.0))
            .unwrap_err();
        assert!(err.to_string().contains("gamma = 1"));
        // Discounted solve on the same MDP is fine.
        solve_fixed_point(&m, &GeneralizedOperator::min(), &SolveOptions::new(0.9)).unwrap();
    }

    #[test]
    fn unverified_custom_operations_are_rejected_by_default() {
        let op = GeneralizedOperator::custom(
            "min-clone",
            |a, b| a.min(b),
            f64::INFINITY,
            crate::op::Domain::all(),
        );
        let err = solve_fixed_point(&chain(), &op, &SolveOptions::new(1.0)).unwrap_err();
        assert!(matches!(err, Error::Unverified(_)));
        let r =
            solve_fixed_point(&chain(), &op, &SolveOptions::new(1.0).allow_unverified()).unwrap();
        assert_eq!(r.q.get(0, 0), 2.0);
    }

    #[test]
    fn harmonic_rejects_negative_rewards_via_domain() {
        let mut m = chain();
        m.set_kernel(0, 0, Kernel::deterministic(1, -2.0));
        let err = solve_fixed_point(
            &m,
            &GeneralizedOperator::harmonic_mean(),
            &SolveOptions::new(1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DomainViolation { .. }));
    }

    #[test]
    fn residuals_decay_at_rate_gamma() {
        let op = GeneralizedOperator::sum();
        for seed in 0..20 {
            let m = random_stochastic_mdp(seed, 7, 3, false);
            let gamma = 0.9;
            let r = solve_fixed_point(&m, &op, &SolveOptions::new(gamma).tol(1e-12)).unwrap();
            let mut prev: Option<f64> = None;
            for w in r.trace.windows(2) {
                let res = w[1].sup_dist(&w[0]);
                if let Some(p) = prev {
                    assert!(res <= gamma * p + 1e-9, "residual {res} after {p}");
                }
                prev = Some(res);
            }
        }
    }

    #[test]
    fn fixed_point_is_unique_across_initialisations() {
        // After stopping at residual <= tol the table is within
        // gamma/(1-gamma) * tol of the fixed point; two runs are within twice
        // that, which stays under 10 * tol for gamma = 0.8.
        let op = GeneralizedOperator::min();
        let tol = 1e-12;
        for seed in 0..10 {
            let m = random_stochastic_mdp(seed, 6, 3, false);
            let base = solve_fixed_point(&m, &op, &SolveOptions::new(0.8).tol(tol)).unwrap();
            for init_seed in 0..10u64 {
                let mut rng = crate::config::rng_from_seed(1000 + init_seed);
                let mut q0 = ValueTable::zeros(&m);
                for s in 0..m.n_states() {
                    for a in m.valid_actions(s) {
                        use rand::Rng;
                        q0.set(s, a, rng.random_range(-50.0..50.0));
                    }
                }
                let r =
                    solve_fixed_point(&m, &op, &SolveOptions::new(0.8).tol(tol).init(q0)).unwrap();
                assert!(
                    r.q.sup_dist(&base.q) <= 10.0 * tol,
                    "seed {seed}/{init_seed}"
                );
            }
        }
    }

    #[test]
    fn policy_evaluation_on_the_chain() {
        let m = chain();
        let pi = Policy {
            actions: vec![Some(0), Some(0), None],
        };
        let r = solve_policy(
            &m,
            &pi,
            &GeneralizedOperator::min(),
            &SolveOptions::new(1.0).tol(0.0),
        )
        .unwrap();
        assert_eq!(r.q.get(0, 0), 2.0);

        let exact =
            evaluate_policy_exact(&m, &pi, &GeneralizedOperator::min(), 1.0, 10, 1000).unwrap();
        assert_eq!(exact[0], 2.0);
        assert_eq!(exact[1], 3.0);
        assert_eq!(exact[2], 0.0); // terminal start
    }

    #[test]
    fn exact_evaluation_averages_over_stochastic_outcomes() {
        // One step, reward 0 or 1 with equal probability.
        let mut m = TabularMdp::new(2, 1);
        m.set_terminal(1);
        m.set_kernel(
            0,
            0,
            Kernel {
                next: vec![(1, 1.0)],
                reward: vec![(0.0, 0.5), (1.0, 0.5)],
            },
        );
        let pi = Policy {
            actions: vec![Some(0), None],
        };
        let v = evaluate_policy_exact(&m, &pi, &GeneralizedOperator::min(), 1.0, 5, 100).unwrap();
        assert_eq!(v[0], 0.5);
    }

    #[test]
    fn budget_errors_name_the_required_count() {
        let m = random_stochastic_mdp(3, 6, 3, false);
        let pi = greedy_policy(&ValueTable::zeros(&m));
        let err =
            evaluate_policy_exact(&m, &pi, &GeneralizedOperator::sum(), 0.9, 20, 2).unwrap_err();
        match err {
            Error::BudgetExceeded { required, budget } => {
                assert!(required > 2);
                assert_eq!(budget, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sum_policy_value_matches_enumeration_on_terminating_mdps() {
        // Forward-only stochastic MDPs: every trajectory ends within n steps,
        // so enumeration at horizon n is exact and must agree with the
        // policy-evaluation fixed point up to accumulated rounding.
        use rand::Rng;
        let op = GeneralizedOperator::sum();
        for seed in 0..10u64 {
            let mut rng = crate::config::rng_from_seed(900 + seed);
            let n = rng.random_range(3..=5);
            let mut m = TabularMdp::new(n, 2);
            m.set_terminal(n - 1);
            for s in 0..n - 1 {
                for a in 0..2 {
                    let hi = rng.random_range(s + 1..n);
                    let lo = rng.random_range(s + 1..n);
                    let p = rng.random_range(0.2..0.8);
                    m.set_kernel(
                        s,
                        a,
                        Kernel {
                            next: vec![(hi, p), (lo, 1.0 - p)],
                            reward: vec![
                                (rng.random_range(-5.0..5.0), 0.5),
                                (rng.random_range(-5.0..5.0), 0.5),
                            ],
                        },
                    );
                }
            }
            let gamma = 0.9;
            let pi = greedy_policy(
                &solve_fixed_point(&m, &op, &SolveOptions::new(gamma).tol(1e-13))
                    .unwrap()
                    .q,
            );
            let sol = solve_policy(&m, &pi, &op, &SolveOptions::new(gamma).tol(1e-13)).unwrap();
            let exact = evaluate_policy_exact(&m, &pi, &op, gamma, n, 1_000_000).unwrap();
            for s in 0..n - 1 {
                let q_pi = sol.q.get(s, pi.actions[s].unwrap());
                assert!(
                    (q_pi - exact[s]).abs() <= 1e-9,
                    "seed {seed} state {s}: {q_pi} vs {}",
                    exact[s]
                );
            }
        }
    }

    #[test]
    fn enumeration_truncation_error_is_bounded_by_discounted_tail() {
        // Single state with a self-loop of reward 1: fixed point 1/(1-gamma),
        // horizon-H enumeration sums H terms, so the gap is exactly
        // gamma^H / (1 - gamma), the advertised truncation bound.
        let mut m = TabularMdp::new(2, 1);
        m.set_terminal(1);
        m.set_kernel(0, 0, Kernel::deterministic(0, 1.0));
        let op = GeneralizedOperator::sum();
        let gamma = 0.9;
        let pi = Policy {
            actions: vec![Some(0), None],
        };
        let sol = solve_policy(&m, &pi, &op, &SolveOptions::new(gamma).tol(1e-13)).unwrap();
        for horizon in [10usize, 30, 60] {
            let exact = evaluate_policy_exact(&m, &pi, &op, gamma, horizon, 10).unwrap();
            let gap = (sol.q.get(0, 0) - exact[0]).abs();
            let bound = gamma.powi(horizon as i32) * 1.0 / (1.0 - gamma) + 1e-9;
            assert!(gap <= bound, "horizon {horizon}: gap {gap} > bound {bound}");
        }
    }

    #[test]
    fn brute_force_matches_greedy_on_deterministic_mdps() {
        for seed in 0..30 {
            for (op, positive) in [
                (GeneralizedOperator::min(), false),
                (GeneralizedOperator::max(), false),
                (GeneralizedOperator::harmonic_mean(), true),
            ] {
                let m = random_deterministic_mdp(seed * 31 + 7, 8, 4, positive);
                let sol = solve_fixed_point(&m, &op, &SolveOptions::new(1.0).tol(0.0)).unwrap();
                let pi = greedy_policy(&sol.q);
                for start in 0..m.n_states() {
                    if m.is_terminal(start) {
                        continue;
                    }
                    let (best, _) = brute_force_optimal(&m, &op, 1.0, m.n_states(), start).unwrap();
                    let greedy_val = evaluate_policy_exact(&m, &pi, &op, 1.0, m.n_states(), 10_000)
                        .unwrap()[start];
                    assert_eq!(greedy_val, best, "{} seed {seed} start {start}", op.name());
                    assert_eq!(sol.q.get(start, pi.actions[start].unwrap()), best);
                }
            }
        }
    }

    #[test]
    fn brute_force_rejects_stochastic_mdps() {
        let m = random_stochastic_mdp(5, 5, 3, false);
        if m.is_deterministic() {
            return; // unlucky draw; other seeds cover it
        }
        assert!(brute_force_optimal(&m, &GeneralizedOperator::min(), 1.0, 10, 0).is_err());
    }

    #[test]
    fn policy_enumeration_finds_the_stochastic_optimum() {
        // Start: action 0 gives 0.4 surely (terminal); action 1 gives 0.5
        // then a coin-flip reward {0, 1}. The min-backup fixed point scores
        // action 1 at 0.5, but the exact expected bottleneck of action 1 is
        // 0.25, so the enumeration must pick action 0.
        let mut m = TabularMdp::new(3, 2);
        m.set_terminal(2);
        m.set_kernel(0, 0, Kernel::deterministic(2, 0.4));
        m.set_kernel(0, 1, Kernel::deterministic(1, 0.5));
        m.set_kernel(
            1,
            0,
            Kernel {
                next: vec![(2, 1.0)],
                reward: vec![(0.0, 0.5), (1.0, 0.5)],
            },
        );
        let op = GeneralizedOperator::min();

        let sol = solve_fixed_point(&m, &op, &SolveOptions::new(1.0).tol(0.0)).unwrap();
        assert_eq!(sol.q.get(0, 0), 0.4);
        assert_eq!(sol.q.get(0, 1), 0.5);
        let pi = greedy_policy(&sol.q);
        assert_eq!(pi.actions[0], Some(1));
        let greedy_val = evaluate_policy_exact(&m, &pi, &op, 1.0, 5, 100).unwrap()[0];
        assert_eq!(greedy_val, 0.25);

        let (best, best_pi) = best_policy_by_enumeration(&m, &op, 1.0, 5, 0, 1000, 1000).unwrap();
        assert_eq!(best, 0.4);
        assert_eq!(best_pi.actions[0], Some(0));
        assert!(greedy_val < best);
    }
}
