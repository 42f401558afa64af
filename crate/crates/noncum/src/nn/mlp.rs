//! Dueling multilayer perceptron with explicit backprop.
//!
//! Layout: `input -> trunk1 -> trunk2`, then two heads off the trunk, a
//! scalar state-value stream and a per-action advantage stream, each with one
//! hidden layer. The outputs combine as
//!
//! ```text
//! Q(s, a) = V(s) + A(s, a) - mean_{a' available} A(s, a')
//! ```
//!
//! where the mean runs over the *available* actions only, so masked actions
//! neither receive nor contribute gradient and the decomposition stays
//! identifiable. Unavailable actions read back negative infinity.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

/// Hidden-layer widths; `trunk` feeds both streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub trunk1: usize,
    pub trunk2: usize,
    pub stream: usize,
    pub actions: usize,
}

impl MlpSpec {
    pub fn new(input: usize, trunk1: usize, trunk2: usize, stream: usize, actions: usize) -> Self {
        assert!(input > 0 && trunk1 > 0 && trunk2 > 0 && stream > 0 && actions > 0);
        MlpSpec {
            input,
            trunk1,
            trunk2,
            stream,
            actions,
        }
    }
}

/// Dense layer, `w` row-major `[n_out x n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    /// Uniform fan-in scaling: `U(-1/sqrt(n_in), 1/sqrt(n_in))`, biases zero.
    fn init(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut l = Linear::zeros(n_in, n_out);
        for w in &mut l.w {
            *w = rng.random_range(-bound..bound);
        }
        l
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.n_in);
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    /// Accumulate `dW += dy ⊗ x`, `db += dy` and return nothing; the caller
    /// computes `dx = W^T dy` separately when it needs it.
    fn accumulate(&self, x: &[f64], dy: &[f64], grad: &mut Linear) {
        for o in 0..self.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &mut grad.w[o * self.n_in..(o + 1) * self.n_in];
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }

    fn back_input(&self, dy: &[f64], dx: &mut Vec<f64>) {
        dx.clear();
        dx.resize(self.n_in, 0.0);
        for o in 0..self.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += g * wi;
            }
        }
    }
}

const TRUNK1: usize = 0;
const TRUNK2: usize = 1;
const VALUE1: usize = 2;
const VALUE2: usize = 3;
const ADV1: usize = 4;
const ADV2: usize = 5;
const N_LAYERS: usize = 6;

#[derive(Debug, Clone)]
pub struct DuelingMlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

/// Gradient accumulator shaped like the network.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    layers: Vec<Linear>,
}

impl GradBuffer {
    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v *= c);
            l.b.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .map(|v| v * v)
            .sum()
    }

    /// Gradients in [`DuelingMlp::flat_params`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    /// Global-norm clipping; returns the pre-clip norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.sq_norm().sqrt();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    av: Vec<f64>,
    aa: Vec<f64>,
    mask: Vec<bool>,
    n_avail: usize,
    pub q: Vec<f64>,
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

impl DuelingMlp {
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let layers = vec![
            Linear::init(spec.input, spec.trunk1, rng),
            Linear::init(spec.trunk1, spec.trunk2, rng),
            Linear::init(spec.trunk2, spec.stream, rng),
            Linear::init(spec.stream, 1, rng),
            Linear::init(spec.trunk2, spec.stream, rng),
            Linear::init(spec.stream, spec.actions, rng),
        ];
        DuelingMlp { spec, layers }
    }

    pub fn spec(&self) -> MlpSpec {
        self.spec
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn zero_grads(&self) -> GradBuffer {
        GradBuffer {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.n_in, l.n_out))
                .collect(),
        }
    }

    pub fn copy_from(&mut self, other: &DuelingMlp) {
        assert_eq!(self.spec, other.spec);
        self.layers.clone_from(&other.layers);
    }

    /// Action values with unavailable actions pinned to negative infinity.
    pub fn forward(&self, x: &[f64], mask: &[bool]) -> ForwardCache {
        assert_eq!(x.len(), self.spec.input, "input width");
        assert_eq!(mask.len(), self.spec.actions, "mask width");
        let n_avail = mask.iter().filter(|&&m| m).count();
        assert!(n_avail > 0, "no available action");
        let mut a1 = Vec::new();
        let mut a2 = Vec::new();
        let mut av = Vec::new();
        let mut aa = Vec::new();
        let mut v_out = Vec::new();
        let mut adv = Vec::new();
        self.layers[TRUNK1].forward(x, &mut a1);
        relu_inplace(&mut a1);
        self.layers[TRUNK2].forward(&a1, &mut a2);
        relu_inplace(&mut a2);
        self.layers[VALUE1].forward(&a2, &mut av);
        relu_inplace(&mut av);
        self.layers[VALUE2].forward(&av, &mut v_out);
        self.layers[ADV1].forward(&a2, &mut aa);
        relu_inplace(&mut aa);
        self.layers[ADV2].forward(&aa, &mut adv);
        let v = v_out[0];
        let mean = adv
            .iter()
            .zip(mask)
            .filter_map(|(a, &m)| m.then_some(*a))
            .sum::<f64>()
            / n_avail as f64;
        let q = adv
            .iter()
            .zip(mask)
            .map(|(a, &m)| if m { v + a - mean } else { f64::NEG_INFINITY })
            .collect();
        ForwardCache {
            x: x.to_vec(),
            a1,
            a2,
            av,
            aa,
            mask: mask.to_vec(),
            n_avail,
            q,
        }
    }

    /// Greedy available action (lowest index wins ties) and its value.
    pub fn best_action(&self, x: &[f64], mask: &[bool]) -> (usize, f64) {
        let cache = self.forward(x, mask);
        argmax(&cache.q)
    }

    /// Accumulate parameter gradients for one sample given `dL/dQ`. Entries
    /// for unavailable actions must be zero.
    pub fn backward(&self, cache: &ForwardCache, dq: &[f64], grads: &mut GradBuffer) {
        assert_eq!(dq.len(), self.spec.actions);
        let total: f64 = dq.iter().sum();
        // Q_a = V + A_a - mean(A over available), so dV = sum(dQ) and
        // dA_j = dQ_j - sum(dQ)/n_avail on available actions.
        let mut d_adv: Vec<f64> = dq
            .iter()
            .zip(&cache.mask)
            .map(|(g, &m)| {
                if m {
                    g - total / cache.n_avail as f64
                } else {
                    debug_assert_eq!(*g, 0.0, "gradient on an unavailable action");
                    0.0
                }
            })
            .collect();
        let d_v = [total];

        let mut d_aa = Vec::new();
        self.layers[ADV2].accumulate(&cache.aa, &d_adv, &mut grads.layers[ADV2]);
        self.layers[ADV2].back_input(&d_adv, &mut d_aa);
        relu_backward(&cache.aa, &mut d_aa);
        self.layers[ADV1].accumulate(&cache.a2, &d_aa, &mut grads.layers[ADV1]);
        let mut d_a2_adv = Vec::new();
        self.layers[ADV1].back_input(&d_aa, &mut d_a2_adv);

        let mut d_av = Vec::new();
        self.layers[VALUE2].accumulate(&cache.av, &d_v, &mut grads.layers[VALUE2]);
        self.layers[VALUE2].back_input(&d_v, &mut d_av);
        relu_backward(&cache.av, &mut d_av);
        self.layers[VALUE1].accumulate(&cache.a2, &d_av, &mut grads.layers[VALUE1]);
        let mut d_a2_val = Vec::new();
        self.layers[VALUE1].back_input(&d_av, &mut d_a2_val);

        let mut d_a2: Vec<f64> = d_a2_adv.iter().zip(&d_a2_val).map(|(a, b)| a + b).collect();
        relu_backward(&cache.a2, &mut d_a2);
        self.layers[TRUNK2].accumulate(&cache.a1, &d_a2, &mut grads.layers[TRUNK2]);
        let mut d_a1 = Vec::new();
        self.layers[TRUNK2].back_input(&d_a2, &mut d_a1);
        relu_backward(&cache.a1, &mut d_a1);
        self.layers[TRUNK1].accumulate(&cache.x, &d_a1, &mut grads.layers[TRUNK1]);
        d_adv.clear();
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        for dim in [
            self.spec.input,
            self.spec.trunk1,
            self.spec.trunk2,
            self.spec.stream,
            self.spec.actions,
        ] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DuelingMlp> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
            if *at + n > bytes.len() {
                return Err(Error::InvalidInput(format!(
                    "truncated model file {}",
                    path.display()
                )));
            }
            let s = &bytes[*at..*at + n];
            *at += n;
            Ok(s)
        };
        if take(&mut at, MAGIC.len())? != MAGIC {
            return Err(Error::InvalidInput(format!(
                "{} is not a model file",
                path.display()
            )));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        }
        let spec = MlpSpec::new(dims[0], dims[1], dims[2], dims[3], dims[4]);
        let shapes = [
            (spec.input, spec.trunk1),
            (spec.trunk1, spec.trunk2),
            (spec.trunk2, spec.stream),
            (spec.stream, 1),
            (spec.trunk2, spec.stream),
            (spec.stream, spec.actions),
        ];
        let mut layers = Vec::with_capacity(N_LAYERS);
        for (n_in, n_out) in shapes {
            let mut l = Linear::zeros(n_in, n_out);
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
            }
            layers.push(l);
        }
        if at != bytes.len() {
            return Err(Error::InvalidInput(format!(
                "trailing bytes in {}",
                path.display()
            )));
        }
        Ok(DuelingMlp { spec, layers })
    }

    /// Flat read-only view of every parameter, used by the finite-difference
    /// tests.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect()
    }

    pub fn nudge_param(&mut self, index: usize, delta: f64) {
        let mut at = index;
        for l in &mut self.layers {
            if at < l.w.len() {
                l.w[at] += delta;
                return;
            }
            at -= l.w.len();
            if at < l.b.len() {
                l.b[at] += delta;
                return;
            }
            at -= l.b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Shift every advantage-head bias by the same constant; the combined
    /// outputs must not move (see the invariance test).
    pub fn shift_advantage_bias(&mut self, c: f64) {
        for b in &mut self.layers[ADV2].b {
            *b += c;
        }
    }
}

const MAGIC: &[u8; 8] = b"DMLP0001";

fn relu_backward(post: &[f64], d: &mut [f64]) {
    for (di, &a) in d.iter_mut().zip(post) {
        if a <= 0.0 {
            *di = 0.0;
        }
    }
}

pub fn argmax(q: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, &v) in q.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Linear>,
    v: Vec<Linear>,
}

impl Adam {
    pub fn new(net: &DuelingMlp, lr: f64) -> Self {
        let zeros: Vec<Linear> = net
            .layers
            .iter()
            .map(|l| Linear::zeros(l.n_in, l.n_out))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut DuelingMlp, grads: &GradBuffer) {
        self.t += 1;
        let h = Hyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            bc1: 1.0 - self.beta1.powi(self.t),
            bc2: 1.0 - self.beta2.powi(self.t),
        };
        for i in 0..net.layers.len() {
            let (p, g, m, v) = (
                &mut net.layers[i],
                &grads.layers[i],
                &mut self.m[i],
                &mut self.v[i],
            );
            adam_update(&mut p.w, &g.w, &mut m.w, &mut v.w, h);
            adam_update(&mut p.b, &g.b, &mut m.b, &mut v.b, h);
        }
    }
}

#[derive(Clone, Copy)]
struct Hyper {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], h: Hyper) {
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = m[i] / h.bc1;
        let v_hat = v[i] / h.bc2;
        p[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}
