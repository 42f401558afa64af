//! Finite tabular MDPs with explicit transition and reward supports.
//!
//! A state-action pair carries two independent finite distributions: one over
//! successor states and one over reward values. Terminal states carry nothing;
//! solvers bootstrap them with the backup operation's identity element so a
//! transition into a terminal state contributes exactly its reward.
//!
//! # Text format
//!
//! One MDP per file. `#` starts a comment, blank lines are ignored.
//!
//! ```text
//! states 3 actions 2 gamma 1.0
//! terminal 2
//! sa 0 0 t 2:1.0 r 0.4:1.0
//! sa 0 1 t 1:1.0 r 0.5:1.0
//! sa 1 0 t 2:1.0 r 0.0:0.5 1.0:0.5
//! ```
//!
//! The header fixes the state and action counts and the discount to use when
//! solving. `terminal` lists terminal state ids. Each `sa s a` line declares a
//! valid action: `t` is followed by `state:prob` pairs, `r` by `value:prob`
//! pairs; each group must sum to 1. A pair `(s, a)` with no line is an invalid
//! action in state `s`.

use rand::Rng;

use crate::config::rng_from_seed;
use crate::{Error, Result};

/// Distributions attached to one valid state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    /// Successor support: `(state, probability)`.
    pub next: Vec<(usize, f64)>,
    /// Reward support: `(value, probability)`.
    pub reward: Vec<(f64, f64)>,
}

impl Kernel {
    pub fn deterministic(next: usize, reward: f64) -> Self {
        Kernel {
            next: vec![(next, 1.0)],
            reward: vec![(reward, 1.0)],
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.next.len() == 1 && self.reward.len() == 1
    }
}

/// One sampled environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next: usize,
    /// Whether `next` is terminal.
    pub terminal: bool,
}

/// A finite MDP. The discount is not part of the type; solvers take it
/// alongside the backup operation.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    terminal: Vec<bool>,
    kernels: Vec<Option<Kernel>>,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        TabularMdp {
            n_states,
            n_actions,
            terminal: vec![false; n_states],
            kernels: vec![None; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn set_terminal(&mut self, s: usize) {
        self.terminal[s] = true;
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn set_kernel(&mut self, s: usize, a: usize, kernel: Kernel) {
        self.kernels[s * self.n_actions + a] = Some(kernel);
    }

    pub fn kernel(&self, s: usize, a: usize) -> Option<&Kernel> {
        self.kernels[s * self.n_actions + a].as_ref()
    }

    pub fn valid_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_actions).filter(move |&a| self.kernels[s * self.n_actions + a].is_some())
    }

    pub fn n_valid_actions(&self, s: usize) -> usize {
        self.valid_actions(s).count()
    }

    /// True iff every kernel has single-point transition and reward supports.
    pub fn is_deterministic(&self) -> bool {
        self.kernels.iter().flatten().all(Kernel::is_deterministic)
    }

    /// Structural checks: probabilities in range and summing to 1 (1e-9),
    /// successor ids in range, terminal states bare, non-terminal states with
    /// at least one action, rewards finite.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        for s in 0..self.n_states {
            let n_valid = self.n_valid_actions(s);
            if self.terminal[s] && n_valid > 0 {
                return bad(format!("terminal state {s} has {n_valid} actions"));
            }
            if !self.terminal[s] && n_valid == 0 {
                return bad(format!("non-terminal state {s} has no valid action"));
            }
            for a in self.valid_actions(s) {
                let k = self.kernel(s, a).unwrap();
                let next_probs: Vec<f64> = k.next.iter().map(|&(_, p)| p).collect();
                let reward_probs: Vec<f64> = k.reward.iter().map(|&(_, p)| p).collect();
                for (group, probs) in [("transition", &next_probs), ("reward", &reward_probs)] {
                    if probs.is_empty() {
                        return bad(format!("({s},{a}): empty {group} support"));
                    }
                    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                        return bad(format!("({s},{a}): {group} probability out of [0,1]"));
                    }
                    let total: f64 = probs.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return bad(format!("({s},{a}): {group} probabilities sum to {total}"));
                    }
                }
                if k.next.iter().any(|&(t, _)| t >= self.n_states) {
                    return bad(format!("({s},{a}): successor out of range"));
                }
                if k.reward.iter().any(|&(r, _)| !r.is_finite()) {
                    return bad(format!("({s},{a}): non-finite reward"));
                }
            }
        }
        Ok(())
    }

    /// True iff the support graph restricted to non-terminal states is
    /// acyclic, i.e. every trajectory reaches a terminal state within
    /// `n_states` steps. Discount 1 is only sound on such MDPs.
    pub fn proven_terminating(&self) -> bool {
        // Colors: 0 unvisited, 1 on stack, 2 done.
        let mut color = vec![0u8; self.n_states];
        let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
        for root in 0..self.n_states {
            if color[root] != 0 || self.terminal[root] {
                continue;
            }
            stack.push((root, self.successors(root)));
            color[root] = 1;
            while let Some((s, rest)) = stack.last_mut() {
                match rest.pop() {
                    None => {
                        color[*s] = 2;
                        stack.pop();
                    }
                    Some(t) => {
                        if self.terminal[t] {
                            continue;
                        }
                        match color[t] {
                            0 => {
                                color[t] = 1;
                                let succ = self.successors(t);
                                stack.push((t, succ));
                            }
                            1 => return false,
                            _ => {}
                        }
                    }
                }
            }
        }
        true
    }

    fn successors(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .valid_actions(s)
            .flat_map(|a| self.kernel(s, a).unwrap().next.iter().map(|&(t, _)| t))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Sample one step. Transition and reward draws are independent.
    pub fn sample_step(&self, s: usize, a: usize, rng: &mut impl Rng) -> Result<Transition> {
        let k = self
            .kernel(s, a)
            .ok_or_else(|| Error::InvalidInput(format!("action {a} is invalid in state {s}")))?;
        let next = sample_support(&k.next, rng);
        let reward = sample_support(&k.reward, rng);
        Ok(Transition {
            state: s,
            action: a,
            reward,
            next,
            terminal: self.terminal[next],
        })
    }

    pub fn to_text(&self, gamma: f64) -> String {
        let mut out = format!(
            "states {} actions {} gamma {}\n",
            self.n_states, self.n_actions, gamma
        );
        let terminals: Vec<String> = (0..self.n_states)
            .filter(|&s| self.terminal[s])
            .map(|s| s.to_string())
            .collect();
        if !terminals.is_empty() {
            out.push_str(&format!("terminal {}\n", terminals.join(" ")));
        }
        for s in 0..self.n_states {
            for a in self.valid_actions(s) {
                let k = self.kernel(s, a).unwrap();
                let t: Vec<String> = k.next.iter().map(|(t, p)| format!("{t}:{p}")).collect();
                let r: Vec<String> = k.reward.iter().map(|(v, p)| format!("{v}:{p}")).collect();
                out.push_str(&format!("sa {s} {a} t {} r {}\n", t.join(" "), r.join(" ")));
            }
        }
        out
    }

    /// Parse the text format. Returns the MDP and the header's discount.
    pub fn from_text(text: &str) -> Result<(TabularMdp, f64)> {
        let mut mdp: Option<TabularMdp> = None;
        let mut gamma = 1.0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tok: Vec<&str> = content.split_whitespace().collect();
            match tok[0] {
                "states" => {
                    if tok.len() != 6 || tok[2] != "actions" || tok[4] != "gamma" {
                        return Err(parse_err(
                            line,
                            "header must be `states A actions B gamma G`",
                        ));
                    }
                    let n_states = parse_tok(tok[1], line, "state count")?;
                    let n_actions = parse_tok(tok[3], line, "action count")?;
                    gamma = parse_tok(tok[5], line, "gamma")?;
                    mdp = Some(TabularMdp::new(n_states, n_actions));
                }
                "terminal" => {
                    let m = mdp
                        .as_mut()
                        .ok_or_else(|| parse_err(line, "terminal before header"))?;
                    for t in &tok[1..] {
                        let s: usize = parse_tok(t, line, "terminal state id")?;
                        if s >= m.n_states {
                            return Err(parse_err(line, "terminal state out of range"));
                        }
                        m.set_terminal(s);
                    }
                }
                "sa" => {
                    let m = mdp
                        .as_mut()
                        .ok_or_else(|| parse_err(line, "sa before header"))?;
                    if tok.len() < 7 || tok[3] != "t" {
                        return Err(parse_err(line, "expected `sa S A t n:p... r v:p...`"));
                    }
                    let s: usize = parse_tok(tok[1], line, "state")?;
                    let a: usize = parse_tok(tok[2], line, "action")?;
                    if s >= m.n_states || a >= m.n_actions {
                        return Err(parse_err(line, "state or action out of range"));
                    }
                    let r_at = tok
                        .iter()
                        .position(|&t| t == "r")
                        .ok_or_else(|| parse_err(line, "missing reward group `r`"))?;
                    let mut next = Vec::new();
                    for pair in &tok[4..r_at] {
                        let (t, p) = parse_pair(pair, line)?;
                        next.push((t as usize, p));
                    }
                    let mut reward = Vec::new();
                    for pair in &tok[r_at + 1..] {
                        reward.push(parse_pair(pair, line)?);
                    }
                    if next.is_empty() || reward.is_empty() {
                        return Err(parse_err(line, "empty transition or reward group"));
                    }
                    m.set_kernel(s, a, Kernel { next, reward });
                }
                other => return Err(parse_err(line, &format!("unknown directive `{other}`"))),
            }
        }
        let mdp = mdp.ok_or_else(|| parse_err(0, "missing header line"))?;
        mdp.validate()?;
        Ok((mdp, gamma))
    }
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, &format!("bad {what}: `{tok}`")))
}

fn parse_pair(pair: &str, line: usize) -> Result<(f64, f64)> {
    let (v, p) = pair
        .split_once(':')
        .ok_or_else(|| parse_err(line, &format!("expected `value:prob`, got `{pair}`")))?;
    Ok((
        parse_tok(v, line, "support value")?,
        parse_tok(p, line, "support probability")?,
    ))
}

fn sample_support<T: Copy>(support: &[(T, f64)], rng: &mut impl Rng) -> T {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(v, p) in support {
        acc += p;
        if u < acc {
            return v;
        }
    }
    support.last().unwrap().0
}

/// A state-value assignment for every valid `(s, a)`; invalid slots hold NaN
/// and are excluded from maxima and distances.
#[derive(Debug, Clone)]
pub struct ValueTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
    valid: Vec<bool>,
}

/// Equality over the valid entries only; invalid slots hold NaN.
impl PartialEq for ValueTable {
    fn eq(&self, other: &Self) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.valid == other.valid
            && self
                .q
                .iter()
                .zip(&other.q)
                .zip(&self.valid)
                .all(|((a, b), &v)| !v || a == b)
    }
}

impl ValueTable {
    /// All-zero table over the MDP's valid pairs: the canonical solver start.
    pub fn zeros(mdp: &TabularMdp) -> Self {
        let n = mdp.n_states() * mdp.n_actions();
        let mut q = vec![f64::NAN; n];
        let mut valid = vec![false; n];
        for s in 0..mdp.n_states() {
            for a in mdp.valid_actions(s) {
                q[s * mdp.n_actions() + a] = 0.0;
                valid[s * mdp.n_actions() + a] = true;
            }
        }
        ValueTable {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            q,
            valid,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn is_valid(&self, s: usize, a: usize) -> bool {
        self.valid[s * self.n_actions + a]
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        debug_assert!(self.is_valid(s, a), "read of invalid pair ({s},{a})");
        self.q[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        debug_assert!(self.is_valid(s, a), "write to invalid pair ({s},{a})");
        self.q[s * self.n_actions + a] = v;
    }

    /// Fill every valid entry with one value (optimistic initialisation).
    pub fn fill(&mut self, v: f64) {
        for i in 0..self.q.len() {
            if self.valid[i] {
                self.q[i] = v;
            }
        }
    }

    /// Max over valid actions; `None` for states with none (terminal).
    pub fn max_value(&self, s: usize) -> Option<f64> {
        let row = &self.q[s * self.n_actions..(s + 1) * self.n_actions];
        let valid = &self.valid[s * self.n_actions..(s + 1) * self.n_actions];
        let mut best: Option<f64> = None;
        for a in 0..self.n_actions {
            if valid[a] && best.is_none_or(|b| row[a] > b) {
                best = Some(row[a]);
            }
        }
        best
    }

    /// Argmax over valid actions, ties to the lowest action index.
    pub fn greedy_action(&self, s: usize) -> Option<usize> {
        let row = &self.q[s * self.n_actions..(s + 1) * self.n_actions];
        let valid = &self.valid[s * self.n_actions..(s + 1) * self.n_actions];
        let mut best: Option<usize> = None;
        for a in 0..self.n_actions {
            if valid[a] && best.is_none_or(|b| row[a] > row[b]) {
                best = Some(a);
            }
        }
        best
    }

    /// Sup-norm distance over the shared valid entries.
    pub fn sup_dist(&self, other: &ValueTable) -> f64 {
        debug_assert_eq!(self.valid, other.valid);
        let mut d: f64 = 0.0;
        for i in 0..self.q.len() {
            if self.valid[i] {
                d = d.max((self.q[i] - other.q[i]).abs());
            }
        }
        d
    }

    /// Valid entries in `(s, a)` row-major order, for traces and CSV rows.
    pub fn valid_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                if self.valid[s * self.n_actions + a] {
                    out.push((s, a, self.q[s * self.n_actions + a]));
                }
            }
        }
        out
    }
}

/// A deterministic policy; terminal states carry no action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub actions: Vec<Option<usize>>,
}

impl Policy {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.actions.len() != mdp.n_states() {
            return Err(Error::InvalidInput("policy length != state count".into()));
        }
        for s in 0..mdp.n_states() {
            match self.actions[s] {
                None if !mdp.is_terminal(s) => {
                    return Err(Error::InvalidInput(format!(
                        "no action for non-terminal state {s}"
                    )));
                }
                Some(a) if mdp.kernel(s, a).is_none() => {
                    return Err(Error::InvalidInput(format!(
                        "invalid action {a} in state {s}"
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Greedy policy from a value table, ties to the lowest action index.
pub fn greedy_policy(q: &ValueTable) -> Policy {
    Policy {
        actions: (0..q.n_states()).map(|s| q.greedy_action(s)).collect(),
    }
}

/// Episodic sampler over a tabular MDP with a fixed start state.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    start: usize,
    state: usize,
    done: bool,
    rng: rand_chacha::ChaCha8Rng,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, start: usize, seed: u64) -> Result<Self> {
        mdp.validate()?;
        if start >= mdp.n_states() || mdp.is_terminal(start) {
            return Err(Error::InvalidInput(format!("bad start state {start}")));
        }
        Ok(TabularEnv {
            mdp,
            start,
            state: start,
            done: false,
            rng: rng_from_seed(seed),
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self) -> usize {
        self.state = self.start;
        self.done = false;
        self.start
    }

    pub fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::InvalidInput("step on a finished episode".into()));
        }
        let t = self.mdp.sample_step(self.state, action, &mut self.rng)?;
        self.state = t.next;
        self.done = t.terminal;
        Ok(t)
    }
}

/// Random deterministic terminating MDP: states `0..n-1` transition only to
/// strictly larger indices, state `n-1` is terminal, rewards are small
/// integers (exact in f64). `positive_rewards` restricts them to `1..=9` for
/// operations with a positive domain.
pub fn random_deterministic_mdp(
    seed: u64,
    max_states: usize,
    max_actions: usize,
    positive_rewards: bool,
) -> TabularMdp {
    assert!(max_states >= 2 && max_actions >= 1);
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=max_states);
    let mut mdp = TabularMdp::new(n, max_actions);
    mdp.set_terminal(n - 1);
    for s in 0..n - 1 {
        let k = rng.random_range(1..=max_actions);
        for a in 0..k {
            let next = rng.random_range(s + 1..n);
            let reward = if positive_rewards {
                rng.random_range(1..=9) as f64
            } else {
                rng.random_range(-9..=9) as f64
            };
            mdp.set_kernel(s, a, Kernel::deterministic(next, reward));
        }
    }
    mdp
}

/// Random stochastic MDP: supports of size 1..=3 over arbitrary states
/// (cycles allowed; meant for discounted solves and one-sweep properties),
/// last state terminal.
pub fn random_stochastic_mdp(
    seed: u64,
    max_states: usize,
    max_actions: usize,
    positive_rewards: bool,
) -> TabularMdp {
    assert!(max_states >= 2 && max_actions >= 1);
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=max_states);
    let mut mdp = TabularMdp::new(n, max_actions);
    mdp.set_terminal(n - 1);
    for s in 0..n - 1 {
        let k = rng.random_range(1..=max_actions);
        for a in 0..k {
            let next = random_support(&mut rng, 3, |rng| rng.random_range(0..n));
            let reward = random_support(&mut rng, 3, |rng| {
                if positive_rewards {
                    rng.random_range(0.5..10.0)
                } else {
                    rng.random_range(-10.0..10.0)
                }
            });
            mdp.set_kernel(s, a, Kernel { next, reward });
        }
    }
    mdp
}

fn random_support<T, R: Rng>(
    rng: &mut R,
    max_points: usize,
    mut draw: impl FnMut(&mut R) -> T,
) -> Vec<(T, f64)> {
    let k = rng.random_range(1..=max_points);
    let mut raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    for p in &mut raw {
        *p /= total;
    }
    raw.into_iter().map(|p| (draw(rng), p)).collect()
}
