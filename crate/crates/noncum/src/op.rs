//! The pluggable backup operation `g` and its verification machinery.
//!
//! A backup operation combines an immediate reward with the (discounted) value
//! of the successor state: the classical case is `g(r, x) = r + x`. Two
//! pointwise conditions on `g` carry the standard theory over to other
//! choices:
//!
//! - non-expansiveness in the second argument, `|g(a,b) - g(a,c)| <= |b - c|`,
//!   makes the induced backup a gamma-contraction in the sup norm, so a unique
//!   fixed point exists and synchronous sweeps converge to it;
//! - monotonicity in the second argument, `b >= c  =>  g(a,b) >= g(a,c)`,
//!   makes the policy that is greedy with respect to that fixed point optimal
//!   on deterministic problems.
//!
//! Built-in operations ([`GeneralizedOperator::sum`], [`min`], [`max`],
//! [`harmonic_mean`]) satisfy both conditions on their stated domains and are
//! constructed pre-verified. Custom operations start unverified; run
//! [`GeneralizedOperator::verify`] (or the standalone checkers) before handing
//! them to a solver, or opt in explicitly through the solver options.
//!
//! [`min`]: GeneralizedOperator::min
//! [`max`]: GeneralizedOperator::max
//! [`harmonic_mean`]: GeneralizedOperator::harmonic_mean

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::config::{child_seed_idx, rng_from_seed};
use crate::{Error, Result};

/// Absolute slack used by the randomized condition checkers.
pub const CONDITION_TOL: f64 = 1e-12;

/// Default sample count for [`GeneralizedOperator::verify`].
pub const DEFAULT_VERIFY_SAMPLES: u64 = 1_000_000;

type CustomFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum EvalImpl {
    Sum,
    Min,
    Max,
    Harmonic,
    Custom(CustomFn),
}

/// Closed interval with optionally open endpoints; infinities are allowed as
/// endpoints and as admitted values (the identity element lives there).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub lo_open: bool,
    pub hi: f64,
    pub hi_open: bool,
}

impl Interval {
    pub const fn all() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            lo_open: false,
            hi: f64::INFINITY,
            hi_open: false,
        }
    }

    /// `(0, +inf]`: strictly positive, infinity admitted.
    pub const fn positive() -> Self {
        Interval {
            lo: 0.0,
            lo_open: true,
            hi: f64::INFINITY,
            hi_open: false,
        }
    }

    /// `[0, +inf]`: non-negative, infinity admitted.
    pub const fn non_negative() -> Self {
        Interval {
            lo: 0.0,
            lo_open: false,
            hi: f64::INFINITY,
            hi_open: false,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        if v.is_nan() {
            return false;
        }
        let lo_ok = if self.lo_open {
            v > self.lo
        } else {
            v >= self.lo
        };
        let hi_ok = if self.hi_open {
            v < self.hi
        } else {
            v <= self.hi
        };
        lo_ok && hi_ok
    }
}

/// Admissible ranges for the two arguments of `g(r, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    /// Range of the reward argument `r`.
    pub reward: Interval,
    /// Range of the bootstrap argument `x` (already discounted).
    pub bootstrap: Interval,
}

impl Domain {
    pub const fn all() -> Self {
        Domain {
            reward: Interval::all(),
            bootstrap: Interval::all(),
        }
    }
}

/// A backup operation `g` together with its identity element and domain.
///
/// The identity element `e` satisfies `g(r, e) = r`; solvers bootstrap
/// terminal successors with it so that terminal transitions contribute exactly
/// their reward. For the built-ins this holds bit-exactly.
#[derive(Clone)]
pub struct GeneralizedOperator {
    name: String,
    eval: EvalImpl,
    identity: f64,
    domain: Domain,
    verified: bool,
}

impl fmt::Debug for GeneralizedOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralizedOperator")
            .field("name", &self.name)
            .field("identity", &self.identity)
            .field("domain", &self.domain)
            .field("verified", &self.verified)
            .finish()
    }
}

impl GeneralizedOperator {
    /// Classical discounted-sum backup: `g(r, x) = r + x`, identity 0.
    pub fn sum() -> Self {
        Self {
            name: "sum".into(),
            eval: EvalImpl::Sum,
            identity: 0.0,
            domain: Domain::all(),
            verified: true,
        }
    }

    /// Bottleneck backup: `g(r, x) = min(r, x)`, identity +inf.
    pub fn min() -> Self {
        Self {
            name: "min".into(),
            eval: EvalImpl::Min,
            identity: f64::INFINITY,
            domain: Domain::all(),
            verified: true,
        }
    }

    /// Peak-reward backup: `g(r, x) = max(r, x)`, identity -inf.
    pub fn max() -> Self {
        Self {
            name: "max".into(),
            eval: EvalImpl::Max,
            identity: f64::NEG_INFINITY,
            domain: Domain::all(),
            verified: true,
        }
    }

    /// Harmonic combination: `g(r, x) = 1 / (1/r + 1/x)`, identity +inf.
    ///
    /// Rewards must be strictly positive. The bootstrap argument additionally
    /// admits 0 as the continuous extension `g(r, 0) = 0`, which is what makes
    /// an all-zero initial value table usable.
    pub fn harmonic_mean() -> Self {
        Self {
            name: "harmonic-mean".into(),
            eval: EvalImpl::Harmonic,
            identity: f64::INFINITY,
            domain: Domain {
                reward: Interval::positive(),
                bootstrap: Interval::non_negative(),
            },
            verified: true,
        }
    }

    /// Wrap an arbitrary binary operation. Starts unverified.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        identity: f64,
        domain: Domain,
    ) -> Self {
        Self {
            name: name.into(),
            eval: EvalImpl::Custom(Arc::new(f)),
            identity,
            domain,
            verified: false,
        }
    }

    /// Look up a built-in by its CLI name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sum" => Some(Self::sum()),
            "min" => Some(Self::min()),
            "max" => Some(Self::max()),
            "harmonic-mean" | "harmonic" => Some(Self::harmonic_mean()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn identity(&self) -> f64 {
        self.identity
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Whether both condition checkers have passed (built-ins are born true).
    pub fn is_verified(&self) -> bool {
        self.verified
    }

    /// Evaluate without domain checks. Callers that already validated their
    /// inputs (inner solver loops) use this path.
    #[inline]
    pub fn eval_unchecked(&self, r: f64, x: f64) -> f64 {
        match &self.eval {
            EvalImpl::Sum => r + x,
            EvalImpl::Min => r.min(x),
            EvalImpl::Max => r.max(x),
            EvalImpl::Harmonic => {
                // Identity must be exact: 1/(1/r) loses a ulp for most r.
                if x == f64::INFINITY {
                    r
                } else {
                    1.0 / (1.0 / r + 1.0 / x)
                }
            }
            EvalImpl::Custom(f) => f(r, x),
        }
    }

    /// Evaluate with domain checks.
    pub fn apply(&self, r: f64, x: f64) -> Result<f64> {
        if !self.domain.reward.contains(r) || !self.domain.bootstrap.contains(x) {
            return Err(Error::DomainViolation {
                op: self.name.clone(),
                r,
                x,
            });
        }
        Ok(self.eval_unchecked(r, x))
    }

    /// Run both checkers; on zero violations the operation becomes verified.
    /// Returns the two reports (non-expansiveness first).
    pub fn verify(&mut self, samples: u64, seed: u64) -> (ConditionReport, ConditionReport) {
        let ne = check_nonexpansive(self, samples, seed);
        let mono = check_monotone(self, samples, seed);
        if ne.violations == 0 && mono.violations == 0 {
            self.verified = true;
        }
        (ne, mono)
    }
}

/// Outcome of a randomized condition check.
///
/// `worst_margin` is the smallest observed slack; a negative margin is a
/// violation, so `worst_margin <= 0` implies `violations > 0` (up to the
/// measure-zero exact-equality case, which the checkers count as satisfied).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub condition: &'static str,
    pub samples: u64,
    pub violations: u64,
    pub worst_margin: f64,
    /// Up to [`ConditionReport::MAX_EXAMPLES`] violating triples `(a, b, c)`.
    pub examples: Vec<(f64, f64, f64)>,
}

impl ConditionReport {
    pub const MAX_EXAMPLES: usize = 8;

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn merge(mut self, other: ConditionReport) -> ConditionReport {
        debug_assert_eq!(self.condition, other.condition);
        self.samples += other.samples;
        self.violations += other.violations;
        self.worst_margin = self.worst_margin.min(other.worst_margin);
        for ex in other.examples {
            if self.examples.len() < Self::MAX_EXAMPLES {
                self.examples.push(ex);
            }
        }
        debug_assert!(self.violations <= self.samples);
        self
    }
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} / {} violations, worst margin {:+.3e}",
            self.condition, self.violations, self.samples, self.worst_margin
        )
    }
}

const CHUNK: u64 = 1 << 16;

/// Sampling box for the checkers, clipped to the operation's domain. The
/// default box is `[-100, 100]` per argument; a strictly-positive domain
/// shifts it to `(0, 100]`.
fn sample_in(interval: &Interval, rng: &mut impl Rng) -> f64 {
    let lo = interval.lo.max(-100.0);
    let hi = interval.hi.min(100.0);
    if interval.lo_open && lo == interval.lo {
        // (lo, hi]: reflect so the open end is excluded.
        hi - (hi - lo) * rng.random::<f64>()
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

fn run_check(
    op: &GeneralizedOperator,
    samples: u64,
    seed: u64,
    condition: &'static str,
    margin: impl Fn(&GeneralizedOperator, f64, f64, f64) -> f64 + Sync,
) -> ConditionReport {
    let n_chunks = samples.div_ceil(CHUNK);
    let parts: Vec<ConditionReport> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let here = CHUNK.min(samples - chunk * CHUNK);
            let mut rng = rng_from_seed(child_seed_idx(seed, condition, chunk));
            let mut report = ConditionReport {
                condition,
                samples: here,
                violations: 0,
                worst_margin: f64::INFINITY,
                examples: Vec::new(),
            };
            for _ in 0..here {
                let a = sample_in(&op.domain.reward, &mut rng);
                let b = sample_in(&op.domain.bootstrap, &mut rng);
                let c = sample_in(&op.domain.bootstrap, &mut rng);
                let m = margin(op, a, b, c);
                report.worst_margin = report.worst_margin.min(m);
                if m < 0.0 || m.is_nan() {
                    report.violations += 1;
                    if report.examples.len() < ConditionReport::MAX_EXAMPLES {
                        report.examples.push((a, b, c));
                    }
                }
            }
            report
        })
        .collect();
    parts
        .into_iter()
        .reduce(ConditionReport::merge)
        .unwrap_or(ConditionReport {
            condition,
            samples: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
            examples: Vec::new(),
        })
}

/// Sample `|g(a,b) - g(a,c)| <= |b - c| + tol` over the domain box.
///
/// Chunks are seeded independently, so the report is identical for a given
/// `(samples, seed)` regardless of thread count.
pub fn check_nonexpansive(op: &GeneralizedOperator, samples: u64, seed: u64) -> ConditionReport {
    run_check(op, samples, seed, "non-expansive", |op, a, b, c| {
        (b - c).abs() + CONDITION_TOL - (op.eval_unchecked(a, b) - op.eval_unchecked(a, c)).abs()
    })
}

/// Sample `b >= c  =>  g(a,b) >= g(a,c) - tol` over the domain box.
pub fn check_monotone(op: &GeneralizedOperator, samples: u64, seed: u64) -> ConditionReport {
    run_check(op, samples, seed, "monotone", |op, a, b, c| {
        let (hi, lo) = if b >= c { (b, c) } else { (c, b) };
        op.eval_unchecked(a, hi) - op.eval_unchecked(a, lo) + CONDITION_TOL
    })
}

/// Evaluate the episode objective by right-folding the backup through a
/// reward sequence: `g(r_1, gamma * g(r_2, ... gamma * r_T))`, base case
/// `r_T`. This is the quantity the induced policy optimizes; for `sum` it is
/// the discounted return, for `min` with `gamma = 1` the bottleneck reward.
pub fn fold_objective(op: &GeneralizedOperator, rewards: &[f64], gamma: f64) -> Result<f64> {
    let (&last, init) = rewards
        .split_last()
        .ok_or_else(|| Error::InvalidInput("objective of an empty reward sequence".into()))?;
    if !op.domain.reward.contains(last) {
        return Err(Error::DomainViolation {
            op: op.name.clone(),
            r: last,
            x: f64::NAN,
        });
    }
    let mut acc = last;
    for &r in init.iter().rev() {
        acc = op.apply(r, gamma * acc)?;
    }
    Ok(acc)
}
