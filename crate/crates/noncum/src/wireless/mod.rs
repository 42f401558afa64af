//! Wireless ad-hoc network simulation: scene generation, short-range
//! path-loss channel model, SINR link rates, and the hop-by-hop joint
//! routing and band-selection environment built on them (see [`env`] and
//! [`train`]).
//!
//! Geometry and radio defaults: a square region split into a 3x3 grid of
//! equal sub-squares with a fixed node count per sub-square, one channel
//! gain per node pair (identical across bands), 30 dBm transmitters,
//! -130 dBm/Hz noise density, and 5 MHz bands. The propagation model is the
//! short-range outdoor line-of-sight lower bound: with breakpoint distance
//! `R = 4 h_tx h_rx / lambda` and `L_R = |20 log10(lambda^2 / (8 pi h_tx
//! h_rx))|`, the loss at distance `d` is `L_R + 20 log10(d/R)` below the
//! breakpoint and `L_R + 40 log10(d/R)` above it, minus the two 2.5 dBi
//! antenna gains. Below the breakpoint this sits exactly `20 log10 2`
//! (about 6.02 dB) under free-space loss, which the tests pin.

pub mod env;
pub mod train;

use rand::Rng;

use crate::config::rng_from_seed;
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Square region side (m).
    pub region_m: f64,
    /// Node counts for the nine sub-squares, row-major.
    pub subregion_counts: [usize; 9],
    pub n_flows: usize,
    pub n_bands: usize,
    /// Bandwidth per band (Hz).
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub antenna_height_m: f64,
    pub antenna_gain_dbi: f64,
    /// Candidate neighbors per observation window (`c`); the action space
    /// is `c` connect actions plus one reprobe action.
    pub neighbors: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            region_m: 1000.0,
            subregion_counts: [6, 8, 7, 6, 5, 10, 8, 9, 6],
            n_flows: 3,
            n_bands: 8,
            bandwidth_hz: 5e6,
            carrier_hz: 2.4e9,
            tx_power_dbm: 30.0,
            noise_psd_dbm_hz: -130.0,
            antenna_height_m: 1.5,
            antenna_gain_dbi: 2.5,
            neighbors: 10,
        }
    }
}

impl SceneConfig {
    /// Small single-flow setup (18 nodes in 300 m, 2 bands) that trains in
    /// minutes rather than days.
    pub fn desk() -> Self {
        SceneConfig {
            region_m: 300.0,
            subregion_counts: [2; 9],
            n_flows: 1,
            n_bands: 2,
            ..SceneConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("region_m", self.region_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("carrier_hz", self.carrier_hz),
            ("antenna_height_m", self.antenna_height_m),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{k} must be positive, got {v}"
                )));
            }
        }
        if self.n_flows == 0 || self.n_bands == 0 || self.neighbors == 0 {
            return Err(Error::InvalidInput(
                "flows, bands, and neighbors must be positive".into(),
            ));
        }
        let n: usize = self.subregion_counts.iter().sum();
        if n < 2 * self.n_flows.max(1) {
            return Err(Error::InvalidInput(format!(
                "{n} nodes cannot host {} flows",
                self.n_flows
            )));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.subregion_counts.iter().sum()
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Breakpoint distance `4 h^2 / lambda` of the two-slope model.
    pub fn breakpoint_m(&self) -> f64 {
        4.0 * self.antenna_height_m * self.antenna_height_m / self.wavelength_m()
    }

    /// Net loss in dB between isotropic ports, antenna gains included;
    /// distances under 1 m are clamped (the caller can count clamps via
    /// [`WirelessScene::short_pair_warnings`]). Strictly increasing in
    /// distance.
    pub fn path_loss_db(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(1.0);
        let r_bp = self.breakpoint_m();
        let lam = self.wavelength_m();
        let l_bp = (20.0
            * (lam * lam
                / (8.0 * std::f64::consts::PI * self.antenna_height_m * self.antenna_height_m))
                .log10())
        .abs();
        let slope = if d <= r_bp { 20.0 } else { 40.0 };
        l_bp + slope * (d / r_bp).log10() - 2.0 * self.antenna_gain_dbi
    }

    /// Thermal noise integrated over one band, in mW.
    pub fn noise_mw(&self) -> f64 {
        10f64.powf(self.noise_psd_dbm_hz / 10.0) * self.bandwidth_hz
    }

    pub fn tx_mw(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0)
    }

    /// Scale constant for distance features: the region diagonal.
    pub fn diagonal_m(&self) -> f64 {
        self.region_m * std::f64::consts::SQRT_2
    }
}

/// Immutable layout: node positions, flow endpoints, and pairwise channel
/// gains (linear power scale, band-independent, symmetric).
#[derive(Debug, Clone, PartialEq)]
pub struct WirelessScene {
    pub cfg: SceneConfig,
    pub positions: Vec<(f64, f64)>,
    /// `(source, destination)` per flow, distinct within each pair.
    pub flows: Vec<(usize, usize)>,
    gains: Vec<f64>,
    /// Node pairs closer than the 1 m model floor.
    pub short_pair_warnings: u32,
}

pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<WirelessScene> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let side = cfg.region_m / 3.0;
    let mut positions = Vec::with_capacity(cfg.n_nodes());
    for (i, &count) in cfg.subregion_counts.iter().enumerate() {
        let (row, col) = (i / 3, i % 3);
        let (x0, y0) = (col as f64 * side, row as f64 * side);
        for _ in 0..count {
            positions.push((
                x0 + rng.random::<f64>() * side,
                y0 + rng.random::<f64>() * side,
            ));
        }
    }
    let n = positions.len();
    let mut flows = Vec::with_capacity(cfg.n_flows);
    for _ in 0..cfg.n_flows {
        let src = rng.random_range(0..n);
        let dst = loop {
            let d = rng.random_range(0..n);
            if d != src {
                break d;
            }
        };
        flows.push((src, dst));
    }
    Ok(WirelessScene::from_parts(cfg.clone(), positions, flows))
}

impl WirelessScene {
    pub fn from_parts(
        cfg: SceneConfig,
        positions: Vec<(f64, f64)>,
        flows: Vec<(usize, usize)>,
    ) -> Self {
        let n = positions.len();
        let mut gains = vec![0.0; n * n];
        let mut short = 0u32;
        for i in 0..n {
            for j in i + 1..n {
                let d = dist(positions[i], positions[j]);
                if d < 1.0 {
                    short += 1;
                }
                let g = 10f64.powf(-cfg.path_loss_db(d) / 10.0);
                gains[i * n + j] = g;
                gains[j * n + i] = g;
            }
        }
        WirelessScene {
            cfg,
            positions,
            flows,
            gains,
            short_pair_warnings: short,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(self.positions[i], self.positions[j])
    }

    /// Linear power gain `|h|^2` between a node pair.
    pub fn gain(&self, i: usize, j: usize) -> f64 {
        self.gains[i * self.n_nodes() + j]
    }

    pub fn to_text(&self) -> String {
        let c = &self.cfg;
        let mut out = String::new();
        out.push_str(&format!("region {:?}\n", c.region_m));
        out.push_str("counts");
        for v in c.subregion_counts {
            out.push_str(&format!(" {v}"));
        }
        out.push('\n');
        out.push_str(&format!("bands {}\n", c.n_bands));
        out.push_str(&format!("bandwidth_hz {:?}\n", c.bandwidth_hz));
        out.push_str(&format!("carrier_hz {:?}\n", c.carrier_hz));
        out.push_str(&format!("tx_power_dbm {:?}\n", c.tx_power_dbm));
        out.push_str(&format!("noise_psd_dbm_hz {:?}\n", c.noise_psd_dbm_hz));
        out.push_str(&format!("antenna_height_m {:?}\n", c.antenna_height_m));
        out.push_str(&format!("antenna_gain_dbi {:?}\n", c.antenna_gain_dbi));
        out.push_str(&format!("neighbors {}\n", c.neighbors));
        for (x, y) in &self.positions {
            out.push_str(&format!("node {x:?} {y:?}\n"));
        }
        for (s, d) in &self.flows {
            out.push_str(&format!("flow {s} {d}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<WirelessScene> {
        let mut cfg = SceneConfig::default();
        let mut positions = Vec::new();
        let mut flows = Vec::new();
        let mut counts_sum = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tok: Vec<&str> = content.split_whitespace().collect();
            let need = match tok[0] {
                "counts" => 10,
                "node" | "flow" => 3,
                _ => 2,
            };
            if tok.len() < need {
                return Err(Error::Parse {
                    line,
                    msg: format!("`{}` needs {} fields", tok[0], need),
                });
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number `{s}`"),
                })
            };
            let parse_u = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad integer `{s}`"),
                })
            };
            match tok[0] {
                "region" => cfg.region_m = parse_f(tok[1])?,
                "counts" => {
                    if tok.len() != 10 {
                        return Err(Error::Parse {
                            line,
                            msg: "counts needs 9 values".into(),
                        });
                    }
                    for (slot, s) in cfg.subregion_counts.iter_mut().zip(&tok[1..]) {
                        *slot = parse_u(s)?;
                    }
                    counts_sum = Some(cfg.subregion_counts.iter().sum::<usize>());
                }
                "bands" => cfg.n_bands = parse_u(tok[1])?,
                "bandwidth_hz" => cfg.bandwidth_hz = parse_f(tok[1])?,
                "carrier_hz" => cfg.carrier_hz = parse_f(tok[1])?,
                "tx_power_dbm" => cfg.tx_power_dbm = parse_f(tok[1])?,
                "noise_psd_dbm_hz" => cfg.noise_psd_dbm_hz = parse_f(tok[1])?,
                "antenna_height_m" => cfg.antenna_height_m = parse_f(tok[1])?,
                "antenna_gain_dbi" => cfg.antenna_gain_dbi = parse_f(tok[1])?,
                "neighbors" => cfg.neighbors = parse_u(tok[1])?,
                "node" => positions.push((parse_f(tok[1])?, parse_f(tok[2])?)),
                "flow" => flows.push((parse_u(tok[1])?, parse_u(tok[2])?)),
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        if let Some(n) = counts_sum {
            if n != positions.len() {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("counts say {n} nodes, found {}", positions.len()),
                });
            }
        }
        cfg.n_flows = flows.len().max(1);
        for &(s, d) in &flows {
            if s >= positions.len() || d >= positions.len() || s == d {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("bad flow {s} -> {d}"),
                });
            }
        }
        if flows.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: "scene has no flows".into(),
            });
        }
        Ok(WirelessScene::from_parts(cfg, positions, flows))
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Achievable rate in bits/s of a `tx -> rx` link on `band`, with every
/// other node active on that band (per `x`) contributing interference:
/// `W log2(1 + g p / (sum of interferer powers + noise))`.
pub fn link_rate(scene: &WirelessScene, x: &[Vec<bool>], tx: usize, rx: usize, band: usize) -> f64 {
    let p = scene.cfg.tx_mw();
    let signal = scene.gain(tx, rx) * p;
    let mut interference = 0.0;
    for u in 0..scene.n_nodes() {
        if u != tx && u != rx && x[u][band] {
            interference += scene.gain(u, rx) * p;
        }
    }
    scene.cfg.bandwidth_hz * (1.0 + signal / (interference + scene.cfg.noise_mw())).log2()
}

/// Total co-band power received at `at` on `band` (interference plus
/// integrated noise, mW), excluding the listed nodes.
pub fn co_band_power_mw(
    scene: &WirelessScene,
    x: &[Vec<bool>],
    at: usize,
    band: usize,
    exclude: &[usize],
) -> f64 {
    let p = scene.cfg.tx_mw();
    let mut power = scene.cfg.noise_mw();
    for u in 0..scene.n_nodes() {
        if u != at && !exclude.contains(&u) && x[u][band] {
            power += scene.gain(u, at) * p;
        }
    }
    power
}

/// One-step backup for the bottleneck objective over a joint
/// candidate-by-band value table: `min(r, gamma * max over unmasked)`. With
/// every entry masked the next state is terminal and the target is `r`.
pub fn qmin_target(r: f64, next_values: &[f64], mask: &[bool], gamma: f64) -> f64 {
    debug_assert_eq!(next_values.len(), mask.len());
    let mut best = f64::NEG_INFINITY;
    for (v, &m) in next_values.iter().zip(mask) {
        if m && *v > best {
            best = *v;
        }
    }
    if best == f64::NEG_INFINITY {
        r
    } else {
        r.min(gamma * best)
    }
}

pub fn to_mbps(bits_per_s: f64) -> f64 {
    bits_per_s / 1e6
}
