//! Recurrent token policy and value heads over flat parameter vectors, with
//! hand-written backpropagation through time.
//!
//! Trunk: `c = tanh(Σ enc[f] + bc)`, `h_{-1} = c`,
//! `h_i = tanh(whh·h_{i-1} + wch·c + emb[y_{i-1}] + pos[i] + bh)`.
//! Actor logits: `o·h_i + bo`, plus `keys[role]·h_i` added to every copy
//! candidate's token. Critic: `V(x) = w_turn·c + b_turn` and
//! `V_i = w_tok·h_i + b_tok` on its own trunk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{Features, NUM_FEATURES, NUM_ROLES};
use crate::response::MAX_RESPONSE_TOKENS;
use crate::vocab::{vocab, Special, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub features: usize,
    pub roles: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 64,
            vocab: vocab().len(),
            max_len: MAX_RESPONSE_TOKENS,
            features: NUM_FEATURES,
            roles: NUM_ROLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TrunkOff {
    enc: usize,
    bc: usize,
    emb: usize,
    pos: usize,
    whh: usize,
    wch: usize,
    bh: usize,
    end: usize,
}

impl TrunkOff {
    fn new(c: &NetConfig, base: usize) -> Self {
        let d = c.hidden;
        let enc = base;
        let bc = enc + c.features * d;
        let emb = bc + d;
        let pos = emb + c.vocab * d;
        let whh = pos + c.max_len * d;
        let wch = whh + d * d;
        let bh = wch + d * d;
        TrunkOff { enc, bc, emb, pos, whh, wch, bh, end: bh + d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ActorLayout {
    pub(crate) trunk: TrunkOff,
    o: usize,
    bo: usize,
    keys: usize,
    pub(crate) len: usize,
}

impl ActorLayout {
    pub(crate) fn new(c: &NetConfig) -> Self {
        let trunk = TrunkOff::new(c, 0);
        let o = trunk.end;
        let bo = o + c.vocab * c.hidden;
        let keys = bo + c.vocab;
        ActorLayout { trunk, o, bo, keys, len: keys + c.roles * c.hidden }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct CriticLayout {
    pub(crate) trunk: TrunkOff,
    w_turn: usize,
    b_turn: usize,
    w_tok: usize,
    b_tok: usize,
    pub(crate) len: usize,
}

impl CriticLayout {
    pub(crate) fn new(c: &NetConfig) -> Self {
        let trunk = TrunkOff::new(c, 0);
        let w_turn = trunk.end;
        let b_turn = w_turn + c.hidden;
        let w_tok = b_turn + 1;
        let b_tok = w_tok + c.hidden;
        CriticLayout { trunk, w_turn, b_turn, w_tok, b_tok, len: b_tok + 1 }
    }
}

/// Actor parameters θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub config: NetConfig,
    pub theta: Vec<f64>,
}

/// Critic parameters φ (turn head and token head share one trunk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    pub config: NetConfig,
    pub phi: Vec<f64>,
}

fn init_trunk(p: &mut [f64], t: &TrunkOff, c: &NetConfig, rng: &mut ChaCha8Rng) {
    let d = c.hidden;
    let rec = Normal::new(0.0, 0.5 / (d as f64).sqrt()).unwrap();
    let emb = Normal::new(0.0, 0.3).unwrap();
    // The encoder starts at zero: features never seen in training contribute nothing.
    for x in &mut p[t.emb..t.whh] {
        *x = emb.sample(rng);
    }
    for x in &mut p[t.whh..t.bh] {
        *x = rec.sample(rng);
    }
}

impl PolicyParams {
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let l = ActorLayout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; l.len];
        init_trunk(&mut theta, &l.trunk, &config, &mut rng);
        let out = Normal::new(0.0, 0.01).unwrap();
        for x in &mut theta[l.o..l.bo] {
            *x = out.sample(&mut rng);
        }
        PolicyParams { config, theta }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub(crate) fn layout(&self) -> ActorLayout {
        ActorLayout::new(&self.config)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }
}

impl ValueParams {
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let l = CriticLayout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC417_1C00);
        let mut phi = vec![0.0; l.len];
        init_trunk(&mut phi, &l.trunk, &config, &mut rng);
        ValueParams { config, phi }
    }

    /// Zero-initialised critic whose trunk is copied from the actor.
    pub fn from_actor(actor: &PolicyParams) -> Self {
        let l = CriticLayout::new(&actor.config);
        let mut phi = vec![0.0; l.len];
        phi[..l.trunk.end].copy_from_slice(&actor.theta[..l.trunk.end]);
        ValueParams { config: actor.config, phi }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub(crate) fn layout(&self) -> CriticLayout {
        CriticLayout::new(&self.config)
    }
}

// ---------------------------------------------------------------------------
// Trunk forward/backward

fn matvec_add(out: &mut [f64], m: &[f64], x: &[f64]) {
    let d = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &m[j * d..(j + 1) * d];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t_add(out: &mut [f64], m: &[f64], g: &[f64]) {
    let d = out.len();
    for (j, &gj) in g.iter().enumerate() {
        if gj == 0.0 {
            continue;
        }
        let row = &m[j * d..(j + 1) * d];
        for (o, a) in out.iter_mut().zip(row) {
            *o += gj * a;
        }
    }
}

fn outer_add(out: &mut [f64], g: &[f64], x: &[f64]) {
    let d = x.len();
    for (j, &gj) in g.iter().enumerate() {
        if gj == 0.0 {
            continue;
        }
        for (o, xi) in out[j * d..(j + 1) * d].iter_mut().zip(x) {
            *o += gj * xi;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hidden states of one pass: `c` and `h_0..h_{n-1}`.
#[derive(Debug, Clone)]
pub(crate) struct TrunkCache {
    pub(crate) c: Vec<f64>,
    pub(crate) hs: Vec<Vec<f64>>,
    inputs: Vec<TokenId>,
}

pub(crate) fn encode(p: &[f64], t: &TrunkOff, d: usize, feats: &Features) -> Vec<f64> {
    let mut pre = p[t.bc..t.bc + d].to_vec();
    for &f in &feats.bag {
        let row = &p[t.enc + f as usize * d..t.enc + (f as usize + 1) * d];
        for (a, b) in pre.iter_mut().zip(row) {
            *a += b;
        }
    }
    pre.iter().map(|x| x.tanh()).collect()
}

/// Input token at each step: BOS, then `y_0..y_{n-2}`.
fn shifted(y: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(y.len());
    v.push(vocab().special(Special::Bos));
    v.extend_from_slice(&y[..y.len().saturating_sub(1)]);
    v
}

pub(crate) struct Stepper<'a> {
    p: &'a [f64],
    t: TrunkOff,
    d: usize,
    max_len: usize,
    wc: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(p: &'a [f64], t: TrunkOff, cfg: &NetConfig, c: &[f64]) -> Self {
        let d = cfg.hidden;
        let mut wc = p[t.bh..t.bh + d].to_vec();
        matvec_add(&mut wc, &p[t.wch..t.wch + d * d], c);
        Stepper { p, t, d, max_len: cfg.max_len, wc }
    }

    pub(crate) fn step(&self, i: usize, h_prev: &[f64], input: TokenId) -> Vec<f64> {
        let (p, t, d) = (self.p, &self.t, self.d);
        let mut a = self.wc.clone();
        matvec_add(&mut a, &p[t.whh..t.whh + d * d], h_prev);
        let e = &p[t.emb + input.index() * d..t.emb + (input.index() + 1) * d];
        let i = i.min(self.max_len - 1);
        let ps = &p[t.pos + i * d..t.pos + (i + 1) * d];
        for k in 0..d {
            a[k] = (a[k] + e[k] + ps[k]).tanh();
        }
        a
    }
}

pub(crate) fn unroll(p: &[f64], t: &TrunkOff, cfg: &NetConfig, feats: &Features, y: &[TokenId]) -> TrunkCache {
    let c = encode(p, t, cfg.hidden, feats);
    let st = Stepper::new(p, *t, cfg, &c);
    let inputs = shifted(y);
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(y.len());
    for (i, &inp) in inputs.iter().enumerate() {
        let h = st.step(i, hs.last().unwrap_or(&c), inp);
        hs.push(h);
    }
    TrunkCache { c, hs, inputs }
}

/// Accumulates trunk gradients given `dL/dh_i` and an extra `dL/dc`.
pub(crate) fn trunk_backward(
    p: &[f64],
    t: &TrunkOff,
    cfg: &NetConfig,
    feats: &Features,
    cache: &TrunkCache,
    mut dhs: Vec<Vec<f64>>,
    mut dc: Vec<f64>,
    g: &mut [f64],
) {
    let d = cfg.hidden;
    let mut dwc = vec![0.0; d];
    for i in (0..cache.hs.len()).rev() {
        let h = &cache.hs[i];
        let da: Vec<f64> = dhs[i].iter().zip(h).map(|(dh, h)| dh * (1.0 - h * h)).collect();
        let h_prev = if i == 0 { &cache.c } else { &cache.hs[i - 1] };
        outer_add(&mut g[t.whh..t.whh + d * d], &da, h_prev);
        let mut dprev = vec![0.0; d];
        matvec_t_add(&mut dprev, &p[t.whh..t.whh + d * d], &da);
        if i == 0 {
            for (a, b) in dc.iter_mut().zip(&dprev) {
                *a += b;
            }
        } else {
            for (a, b) in dhs[i - 1].iter_mut().zip(&dprev) {
                *a += b;
            }
        }
        let inp = cache.inputs[i].index();
        let pi = i.min(cfg.max_len - 1);
        for k in 0..d {
            g[t.emb + inp * d + k] += da[k];
            g[t.pos + pi * d + k] += da[k];
            dwc[k] += da[k];
        }
    }
    outer_add(&mut g[t.wch..t.wch + d * d], &dwc, &cache.c);
    for k in 0..d {
        g[t.bh + k] += dwc[k];
    }
    matvec_t_add(&mut dc, &p[t.wch..t.wch + d * d], &dwc);
    let dpre: Vec<f64> = dc.iter().zip(&cache.c).map(|(g, c)| g * (1.0 - c * c)).collect();
    for k in 0..d {
        g[t.bc + k] += dpre[k];
    }
    for &f in &feats.bag {
        let row = &mut g[t.enc + f as usize * d..t.enc + (f as usize + 1) * d];
        for (a, b) in row.iter_mut().zip(&dpre) {
            *a += b;
        }
    }
}

// ---------------------------------------------------------------------------
// Actor

pub(crate) fn logits(params: &PolicyParams, feats: &Features, h: &[f64]) -> Vec<f64> {
    let l = params.layout();
    let (p, d, v) = (&params.theta, params.config.hidden, params.config.vocab);
    let mut z = p[l.bo..l.bo + v].to_vec();
    matvec_add(&mut z, &p[l.o..l.o + v * d], h);
    for &(r, tok) in &feats.copies {
        let k = &p[l.keys + r as usize * d..l.keys + (r as usize + 1) * d];
        z[tok.index()] += dot(k, h);
    }
    z
}

/// Softmax probabilities and log-probabilities of logits.
pub fn log_softmax(z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|x| (x - m).exp()).sum();
    let lse = m + s.ln();
    let lp: Vec<f64> = z.iter().map(|x| x - lse).collect();
    let p = lp.iter().map(|x| x.exp()).collect();
    (p, lp)
}

/// Per-token log π(y_i | x, y_<i) with their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbTrace {
    pub token_logp: Vec<f64>,
    pub total: f64,
}

impl LogProbTrace {
    pub fn new(token_logp: Vec<f64>) -> Self {
        let total = token_logp.iter().sum();
        LogProbTrace { token_logp, total }
    }
}

/// Forward pass over a fixed response.
pub struct ActorPass {
    pub(crate) trunk: TrunkCache,
    pub probs: Vec<Vec<f64>>,
    pub logps: Vec<Vec<f64>>,
    pub trace: LogProbTrace,
    /// Per-token entropy.
    pub entropy: Vec<f64>,
}

pub fn actor_forward(params: &PolicyParams, feats: &Features, y: &[TokenId]) -> ActorPass {
    let l = params.layout();
    let trunk = unroll(&params.theta, &l.trunk, &params.config, feats, y);
    let mut probs = Vec::with_capacity(y.len());
    let mut logps = Vec::with_capacity(y.len());
    let mut tok = Vec::with_capacity(y.len());
    let mut entropy = Vec::with_capacity(y.len());
    for (i, h) in trunk.hs.iter().enumerate() {
        let (p, lp) = log_softmax(&logits(params, feats, h));
        tok.push(lp[y[i].index()]);
        entropy.push(-p.iter().zip(&lp).map(|(a, b)| if *a > 0.0 { a * b } else { 0.0 }).sum::<f64>());
        probs.push(p);
        logps.push(lp);
    }
    ActorPass { trunk, probs, logps, trace: LogProbTrace::new(tok), entropy }
}

/// Gradient of `Σ_i w_logp[i]·log π(y_i) + Σ_i w_ent[i]·H_i` added into `g`.
pub fn actor_backward(
    params: &PolicyParams,
    feats: &Features,
    y: &[TokenId],
    pass: &ActorPass,
    w_logp: &[f64],
    w_ent: &[f64],
    g: &mut [f64],
) {
    let l = params.layout();
    let (p, d, v) = (&params.theta, params.config.hidden, params.config.vocab);
    let mut dhs = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let (pr, lp) = (&pass.probs[i], &pass.logps[i]);
        let h = &pass.trunk.hs[i];
        let mut dz: Vec<f64> = pr.iter().map(|q| -w_logp[i] * q).collect();
        dz[y[i].index()] += w_logp[i];
        if w_ent[i] != 0.0 {
            let hent = pass.entropy[i];
            for k in 0..v {
                dz[k] -= w_ent[i] * pr[k] * (lp[k] + hent);
            }
        }
        outer_add(&mut g[l.o..l.o + v * d], &dz, h);
        for k in 0..v {
            g[l.bo + k] += dz[k];
        }
        let mut dh = vec![0.0; d];
        matvec_t_add(&mut dh, &p[l.o..l.o + v * d], &dz);
        for &(r, tok) in &feats.copies {
            let gz = dz[tok.index()];
            if gz == 0.0 {
                continue;
            }
            let base = l.keys + r as usize * d;
            for k in 0..d {
                dh[k] += gz * p[base + k];
                g[base + k] += gz * h[k];
            }
        }
        dhs.push(dh);
    }
    trunk_backward(p, &l.trunk, &params.config, feats, &pass.trunk, dhs, vec![0.0; d], g);
}

/// Log-probability trace and `∂ Σ log π / ∂θ`.
pub fn log_prob_and_grad(params: &PolicyParams, feats: &Features, y: &[TokenId]) -> (LogProbTrace, Vec<f64>) {
    let pass = actor_forward(params, feats, y);
    let mut g = vec![0.0; params.len()];
    let ones = vec![1.0; y.len()];
    let zeros = vec![0.0; y.len()];
    actor_backward(params, feats, y, &pass, &ones, &zeros, &mut g);
    (pass.trace, g)
}

// ---------------------------------------------------------------------------
// Critic

pub fn value_turn(phi: &ValueParams, feats: &Features) -> f64 {
    let l = phi.layout();
    let d = phi.config.hidden;
    let c = encode(&phi.phi, &l.trunk, d, feats);
    dot(&phi.phi[l.w_turn..l.w_turn + d], &c) + phi.phi[l.b_turn]
}

/// Turn value and `∂V/∂φ`.
pub fn value_and_grad_turn(phi: &ValueParams, feats: &Features) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; phi.len()];
    let v = value_turn_backward(phi, feats, 1.0, &mut g);
    (v, g)
}

/// Turn value; adds `dv·∂V/∂φ` into `g`.
pub fn value_turn_backward(phi: &ValueParams, feats: &Features, dv: f64, g: &mut [f64]) -> f64 {
    let l = phi.layout();
    let d = phi.config.hidden;
    let p = &phi.phi;
    let c = encode(p, &l.trunk, d, feats);
    let v = dot(&p[l.w_turn..l.w_turn + d], &c) + p[l.b_turn];
    for k in 0..d {
        g[l.w_turn + k] += dv * c[k];
    }
    g[l.b_turn] += dv;
    let dpre: Vec<f64> = (0..d).map(|k| dv * p[l.w_turn + k] * (1.0 - c[k] * c[k])).collect();
    for k in 0..d {
        g[l.trunk.bc + k] += dpre[k];
    }
    for &f in &feats.bag {
        let base = l.trunk.enc + f as usize * d;
        for k in 0..d {
            g[base + k] += dpre[k];
        }
    }
    v
}

/// Value before each response token: one entry per position of `y`.
pub fn value_token(phi: &ValueParams, feats: &Features, y: &[TokenId]) -> Vec<f64> {
    let l = phi.layout();
    let d = phi.config.hidden;
    let cache = unroll(&phi.phi, &l.trunk, &phi.config, feats, y);
    cache.hs.iter().map(|h| dot(&phi.phi[l.w_tok..l.w_tok + d], h) + phi.phi[l.b_tok]).collect()
}

/// Token values and the gradient of `Σ_i dv[i]·V_i`.
pub fn value_token_and_grad(phi: &ValueParams, feats: &Features, y: &[TokenId], dv: &[f64], g: &mut [f64]) -> Vec<f64> {
    let l = phi.layout();
    let d = phi.config.hidden;
    let p = &phi.phi;
    let cache = unroll(p, &l.trunk, &phi.config, feats, y);
    let w = &p[l.w_tok..l.w_tok + d];
    let mut vals = Vec::with_capacity(y.len());
    let mut dhs = Vec::with_capacity(y.len());
    for (i, h) in cache.hs.iter().enumerate() {
        vals.push(dot(w, h) + p[l.b_tok]);
        for k in 0..d {
            g[l.w_tok + k] += dv[i] * h[k];
        }
        g[l.b_tok] += dv[i];
        dhs.push(w.iter().map(|x| dv[i] * x).collect());
    }
    trunk_backward(p, &l.trunk, &phi.config, feats, &cache, dhs, vec![0.0; d], g);
    vals
}
