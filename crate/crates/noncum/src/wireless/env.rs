//! Hop-by-hop route construction with joint band selection.
//!
//! Each flow grows a route from its source. On its turn the flow's agent
//! looks at one observation per band (features of the `c` closest eligible
//! neighbors) and picks a (band, action) pair: actions `0..c` connect the
//! next hop to that candidate on the band, action `c` *reprobes*, sliding
//! the candidate window to the next-closest `c` eligible nodes. A flow ends
//! delivered when the frontier reaches the destination, or failed when it
//! hits the hop cap or slides the window past the last eligible node.
//! Flows take turns round-robin so interference during construction is
//! well defined.
//!
//! Rewards exist only in hindsight: once every flow has ended, all link
//! rates are recomputed under the final transmitter set and each hop's
//! reward is its link rate. Hop transitions of a failed flow keep their
//! rates except the terminal one, which scores 0, matching the flow's zero
//! objective contribution. Reprobe transitions carry no reward sample: the
//! learning target passes the discounted bootstrap through unchanged.

use rand::Rng;

use crate::nn::dqn::{best_over_candidates, NnTransition};
use crate::nn::mlp::DuelingMlp;
use crate::op::{fold_objective, GeneralizedOperator};
use crate::wireless::{co_band_power_mw, link_rate, to_mbps, WirelessScene};
use crate::{Error, Result};

pub const DEFAULT_HOP_CAP: usize = 30;
pub const FEATURES_PER_CANDIDATE: usize = 4;
/// Distance feature for padded candidate slots, beyond any real scaled
/// distance (which is at most 1 by construction).
pub const PAD_DISTANCE: f64 = 1.5;
/// Interference features are (received dBm - noise floor dBm) / this.
pub const INTERFERENCE_SCALE_DB: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Active,
    Delivered,
    Failed,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    /// Nodes on the route so far, starting at the source.
    pub route: Vec<usize>,
    /// Band of each established hop; one shorter than `route`.
    pub bands: Vec<usize>,
    /// Candidate window index; window `w` covers the eligible nodes ranked
    /// `[w*c, w*c + c)` by distance from the frontier.
    pub window: usize,
    pub status: FlowStatus,
}

impl FlowState {
    pub fn frontier(&self) -> usize {
        *self.route.last().unwrap()
    }

    pub fn hops(&self) -> usize {
        self.bands.len()
    }
}

#[derive(Debug, Clone)]
pub struct RoutingState {
    pub flows: Vec<FlowState>,
    /// Active-transmitter indicator per node and band; a node transmits on
    /// a band exactly when some established hop uses it.
    pub x: Vec<Vec<bool>>,
    pub hop_cap: usize,
}

impl RoutingState {
    pub fn new(scene: &WirelessScene, hop_cap: usize) -> Self {
        RoutingState {
            flows: scene
                .flows
                .iter()
                .map(|&(src, _)| FlowState {
                    route: vec![src],
                    bands: Vec::new(),
                    window: 0,
                    status: FlowStatus::Active,
                })
                .collect(),
            x: vec![vec![false; scene.cfg.n_bands]; scene.n_nodes()],
            hop_cap,
        }
    }

    pub fn all_done(&self) -> bool {
        self.flows.iter().all(|f| f.status != FlowStatus::Active)
    }
}

/// Nodes not yet on the flow's route, closest-first from its frontier
/// (ties broken by node index).
pub fn eligible_neighbors(scene: &WirelessScene, state: &RoutingState, flow: usize) -> Vec<usize> {
    let f = &state.flows[flow];
    let frontier = f.frontier();
    let mut out: Vec<usize> = (0..scene.n_nodes())
        .filter(|n| !f.route.contains(n))
        .collect();
    out.sort_by(|&a, &b| {
        scene
            .distance(frontier, a)
            .total_cmp(&scene.distance(frontier, b))
            .then(a.cmp(&b))
    });
    out
}

#[derive(Debug, Clone)]
pub struct AgentObservation {
    /// `4c` features, candidate-major: scaled agent-to-candidate distance,
    /// scaled candidate-to-destination distance, angle to the destination
    /// direction over pi, scaled co-band power at the candidate.
    pub features: Vec<f64>,
    /// `c` connect actions plus the always-available reprobe action.
    pub mask: Vec<bool>,
    /// Node ids behind the connect actions (may be shorter than `c`).
    pub candidates: Vec<usize>,
}

pub fn observe(
    scene: &WirelessScene,
    state: &RoutingState,
    flow: usize,
    band: usize,
) -> Result<AgentObservation> {
    let f = &state.flows[flow];
    if f.status != FlowStatus::Active {
        return Err(Error::InvalidInput(format!("flow {flow} is finished")));
    }
    if band >= scene.cfg.n_bands {
        return Err(Error::InvalidInput(format!("band {band} out of range")));
    }
    let c = scene.cfg.neighbors;
    let eligible = eligible_neighbors(scene, state, flow);
    let start = (f.window * c).min(eligible.len());
    let end = (start + c).min(eligible.len());
    let candidates: Vec<usize> = eligible[start..end].to_vec();

    let frontier = f.frontier();
    let dest = scene.flows[flow].1;
    let diag = scene.cfg.diagonal_m();
    let noise_dbm = 10.0 * scene.cfg.noise_mw().log10();
    let (fx, fy) = scene.positions[frontier];
    let (dx, dy) = scene.positions[dest];
    let to_dest = (dx - fx, dy - fy);
    let dest_norm = (to_dest.0 * to_dest.0 + to_dest.1 * to_dest.1).sqrt();

    let mut features = Vec::with_capacity(FEATURES_PER_CANDIDATE * c);
    let mut mask = vec![false; c + 1];
    for slot in 0..c {
        if let Some(&cand) = candidates.get(slot) {
            mask[slot] = true;
            let (cx, cy) = scene.positions[cand];
            let to_cand = (cx - fx, cy - fy);
            let cand_norm = (to_cand.0 * to_cand.0 + to_cand.1 * to_cand.1).sqrt();
            let cosine = ((to_cand.0 * to_dest.0 + to_cand.1 * to_dest.1)
                / (cand_norm * dest_norm))
                .clamp(-1.0, 1.0);
            let power = co_band_power_mw(scene, &state.x, cand, band, &[frontier]);
            features.push(scene.distance(frontier, cand) / diag);
            features.push(scene.distance(cand, dest) / diag);
            features.push(cosine.acos() / std::f64::consts::PI);
            features.push((10.0 * power.log10() - noise_dbm) / INTERFERENCE_SCALE_DB);
        } else {
            features.extend_from_slice(&[PAD_DISTANCE, PAD_DISTANCE, 1.0, 0.0]);
        }
    }
    mask[c] = true;
    Ok(AgentObservation {
        features,
        mask,
        candidates,
    })
}

/// Per-band observations as `(features, mask)` pairs, the successor format
/// stored in transitions.
pub fn observe_all_bands(
    scene: &WirelessScene,
    state: &RoutingState,
    flow: usize,
) -> Result<Vec<(Vec<f64>, Vec<bool>)>> {
    (0..scene.cfg.n_bands)
        .map(|b| observe(scene, state, flow, b).map(|o| (o.features, o.mask)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionEffect {
    /// `(tx, rx, band)` when the action established a hop.
    pub hop: Option<(usize, usize, usize)>,
    /// Flow status after the action.
    pub status: FlowStatus,
}

/// Apply a (band, action) decision for one flow. Actions `0..c` connect to
/// that candidate of the current window; action `c` reprobes. Choosing a
/// padded candidate slot is an error; reprobing past the last eligible node
/// or exhausting the hop cap fails the flow.
pub fn apply_action(
    scene: &WirelessScene,
    state: &mut RoutingState,
    flow: usize,
    band: usize,
    action: usize,
) -> Result<ActionEffect> {
    let c = scene.cfg.neighbors;
    if action > c {
        return Err(Error::InvalidInput(format!(
            "action {action} out of range 0..={c}"
        )));
    }
    if band >= scene.cfg.n_bands {
        return Err(Error::InvalidInput(format!("band {band} out of range")));
    }
    if state.flows[flow].status != FlowStatus::Active {
        return Err(Error::InvalidInput(format!("flow {flow} is finished")));
    }
    let eligible = eligible_neighbors(scene, state, flow);
    let f = &mut state.flows[flow];

    if action == c {
        f.window += 1;
        if f.window * c >= eligible.len() {
            f.status = FlowStatus::Failed;
        }
        return Ok(ActionEffect {
            hop: None,
            status: f.status,
        });
    }

    let slot = f.window * c + action;
    if slot >= eligible.len() {
        return Err(Error::InvalidInput(format!(
            "connect action {action} is padded (masked)"
        )));
    }
    let rx = eligible[slot];
    let tx = f.frontier();
    f.route.push(rx);
    f.bands.push(band);
    f.window = 0;
    state.x[tx][band] = true;
    f.status = if rx == scene.flows[flow].1 {
        FlowStatus::Delivered
    } else if f.bands.len() >= state.hop_cap {
        FlowStatus::Failed
    } else {
        FlowStatus::Active
    };
    Ok(ActionEffect {
        hop: Some((tx, rx, band)),
        status: f.status,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedRewards {
    /// Link rate of every established hop (Mbps), per flow in hop order,
    /// under the final interference pattern.
    pub hop_rates_mbps: Vec<Vec<f64>>,
    /// Min over a delivered flow's hops; 0 for failed flows.
    pub bottlenecks_mbps: Vec<f64>,
    /// Mean of the per-flow bottlenecks.
    pub objective_mbps: f64,
}

/// Recompute all hop rates under the final transmitter set and reduce them
/// to per-flow bottlenecks and the global objective.
pub fn finalize_rewards(scene: &WirelessScene, state: &RoutingState) -> Result<FinalizedRewards> {
    if !state.all_done() {
        return Err(Error::InvalidInput(
            "finalize before all flows ended".into(),
        ));
    }
    let mut hop_rates_mbps = Vec::with_capacity(state.flows.len());
    let mut bottlenecks_mbps = Vec::with_capacity(state.flows.len());
    for f in &state.flows {
        let rates: Vec<f64> = f
            .bands
            .iter()
            .enumerate()
            .map(|(i, &b)| to_mbps(link_rate(scene, &state.x, f.route[i], f.route[i + 1], b)))
            .collect();
        let bottleneck = if f.status == FlowStatus::Delivered {
            rates.iter().cloned().fold(f64::INFINITY, f64::min)
        } else {
            0.0
        };
        hop_rates_mbps.push(rates);
        bottlenecks_mbps.push(bottleneck);
    }
    let objective_mbps = bottlenecks_mbps.iter().sum::<f64>() / bottlenecks_mbps.len() as f64;
    Ok(FinalizedRewards {
        hop_rates_mbps,
        bottlenecks_mbps,
        objective_mbps,
    })
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    /// Finalized transitions per flow, in decision order.
    pub per_flow: Vec<Vec<NnTransition>>,
    pub rewards: FinalizedRewards,
    pub links_per_flow: f64,
    pub delivered: usize,
    pub decisions: usize,
}

/// Run one full episode on a scene. With `net` absent (or epsilon 1) every
/// decision is uniform over the valid (band, action) pairs; otherwise the
/// shared network acts epsilon-greedily over the joint choice.
pub fn run_episode(
    scene: &WirelessScene,
    hop_cap: usize,
    net: Option<&DuelingMlp>,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<EpisodeOutcome> {
    let mut state = RoutingState::new(scene, hop_cap);
    let k = scene.flows.len();
    let mut per_flow: Vec<Vec<NnTransition>> = vec![Vec::new(); k];
    // Index of each flow's transition that is waiting for its successor
    // observations, and the hop index behind each transition (None for
    // reprobes), used when rewards are filled in afterwards.
    let mut pending: Vec<Option<usize>> = vec![None; k];
    let mut hop_of: Vec<Vec<Option<usize>>> = vec![Vec::new(); k];
    let mut decisions = 0usize;

    while !state.all_done() {
        for flow in 0..k {
            if state.flows[flow].status != FlowStatus::Active {
                continue;
            }
            let obs_all = observe_all_bands(scene, &state, flow)?;
            if let Some(idx) = pending[flow].take() {
                per_flow[flow][idx].next = obs_all.clone();
            }
            let (band, action) = choose(&obs_all, net, epsilon, rng);
            let effect = apply_action(scene, &mut state, flow, band, action)?;
            let done = effect.status != FlowStatus::Active;
            let (features, mask) = obs_all.into_iter().nth(band).unwrap();
            per_flow[flow].push(NnTransition {
                obs: features,
                mask,
                action,
                reward: None,
                next: Vec::new(),
                done,
            });
            hop_of[flow].push(effect.hop.map(|_| state.flows[flow].hops() - 1));
            if !done {
                pending[flow] = Some(per_flow[flow].len() - 1);
            }
            decisions += 1;
        }
    }

    let rewards = finalize_rewards(scene, &state)?;
    for flow in 0..k {
        let failed = state.flows[flow].status == FlowStatus::Failed;
        let last = per_flow[flow].len() - 1;
        for (i, t) in per_flow[flow].iter_mut().enumerate() {
            t.reward = match hop_of[flow][i] {
                _ if failed && i == last => Some(0.0),
                Some(h) => Some(rewards.hop_rates_mbps[flow][h]),
                None => None,
            };
        }
    }
    let links_per_flow = state.flows.iter().map(|f| f.hops() as f64).sum::<f64>() / k as f64;
    let delivered = state
        .flows
        .iter()
        .filter(|f| f.status == FlowStatus::Delivered)
        .count();
    Ok(EpisodeOutcome {
        per_flow,
        rewards,
        links_per_flow,
        delivered,
        decisions,
    })
}

fn choose(
    obs_all: &[(Vec<f64>, Vec<bool>)],
    net: Option<&DuelingMlp>,
    epsilon: f64,
    rng: &mut impl Rng,
) -> (usize, usize) {
    let explore = net.is_none() || rng.random::<f64>() < epsilon;
    if explore {
        let valid: Vec<(usize, usize)> = obs_all
            .iter()
            .enumerate()
            .flat_map(|(b, (_, mask))| {
                mask.iter()
                    .enumerate()
                    .filter(|(_, &m)| m)
                    .map(move |(a, _)| (b, a))
            })
            .collect();
        valid[rng.random_range(0..valid.len())]
    } else {
        let (band, action, _) = best_over_candidates(net.unwrap(), obs_all);
        (band, action)
    }
}

/// Per-flow bottleneck recomputed as a fold of the hop rewards; used to pin
/// the reward wiring against the objective definition.
pub fn bottleneck_fold(hop_rates_mbps: &[f64]) -> Result<f64> {
    fold_objective(&GeneralizedOperator::min(), hop_rates_mbps, 1.0)
}
