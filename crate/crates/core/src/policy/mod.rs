//! Micro token policy π_θ, value heads V_φ, optimizer and the supervised
//! prior-learning trainer.

pub mod features;
pub mod net;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use features::{featurize, Features, NUM_FEATURES, NUM_ROLES};
pub use net::{
    actor_backward, actor_forward, log_prob_and_grad, log_softmax, value_and_grad_turn, value_token,
    value_token_and_grad, value_turn, value_turn_backward, ActorPass, LogProbTrace, NetConfig, PolicyParams,
    ValueParams,
};

use crate::priors::PriorSample;
use crate::vocab::{vocab, Tag, TokenId, VOCAB_VERSION};

/// Autoregressive sampling until `<|action_end|>` or `max_len` tokens.
/// `temperature == 0` decodes greedily. The trace records log π_θ at
/// temperature 1, which is what the PPO ratio needs.
pub fn sample_response(
    params: &PolicyParams,
    feats: &Features,
    rng: &mut impl Rng,
    temperature: f64,
    max_len: usize,
) -> (Vec<TokenId>, LogProbTrace) {
    let l = params.layout();
    let cfg = &params.config;
    let end = vocab().tag(Tag::ActionEnd);
    let c = net::encode(&params.theta, &l.trunk, cfg.hidden, feats);
    let st = net::Stepper::new(&params.theta, l.trunk, cfg, &c);
    let mut h = c.clone();
    let mut prev = vocab().special(crate::vocab::Special::Bos);
    let (mut out, mut lps) = (Vec::new(), Vec::new());
    for i in 0..max_len.min(cfg.max_len) {
        h = st.step(i, &h, prev);
        let z = net::logits(params, feats, &h);
        let (p, lp) = log_softmax(&z);
        let k = if temperature <= 0.0 {
            argmax(&z)
        } else if temperature == 1.0 {
            categorical(&p, rng)
        } else {
            let zt: Vec<f64> = z.iter().map(|x| x / temperature).collect();
            categorical(&log_softmax(&zt).0, rng)
        };
        let tok = TokenId(k as u16);
        out.push(tok);
        lps.push(lp[k]);
        prev = tok;
        if tok == end {
            break;
        }
    }
    (out, LogProbTrace::new(lps))
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in z.iter().enumerate() {
        if x > z[best] {
            best = i;
        }
    }
    best
}

fn categorical(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Adam with bias correction; `step` descends along `grad`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            if g == 0.0 && self.m[i] == 0.0 {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / b1t) / ((self.v[i] / b2t).sqrt() + self.eps);
        }
    }
}

/// Rescales `g` to global norm at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for x in g.iter_mut() {
            *x *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EplError {
    #[error("prior dataset is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EplConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for EplConfig {
    fn default() -> Self {
        EplConfig { epochs: 2, lr: 1e-3, batch: 16, grad_clip: 1.0, seed: 0 }
    }
}

/// Loss curve of a supervised run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EplReport {
    /// Mean per-token cross-entropy of each epoch (before each update).
    pub epoch_token_loss: Vec<f64>,
    /// Objective `-(1/B) Σ_i Σ_j log π` of every minibatch.
    pub batch_loss: Vec<f64>,
}

/// Mean per-token cross-entropy of `params` on `data`.
pub fn token_cross_entropy(params: &PolicyParams, data: &[PriorSample]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for d in data {
        let f = featurize(&d.prompt);
        let pass = actor_forward(params, &f, &d.target);
        s -= pass.trace.total;
        n += d.target.len();
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Minimises `-(1/N) Σ_i Σ_j log π(y_ij | x_i, y_i<j)` with Adam.
pub fn epl_train(params: &mut PolicyParams, data: &[PriorSample], cfg: &EplConfig) -> Result<EplReport, EplError> {
    if data.is_empty() {
        return Err(EplError::EmptyDataset);
    }
    let feats: Vec<Features> = data.iter().map(|d| featurize(&d.prompt)).collect();
    let mut opt = Adam::new(params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE91);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = EplReport::default();
    let mut g = vec![0.0; params.len()];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut tok_loss, mut toks) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch.max(1)) {
            g.iter_mut().for_each(|x| *x = 0.0);
            let mut loss = 0.0;
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let y = &data[i].target;
                let pass = actor_forward(params, &feats[i], y);
                loss -= w * pass.trace.total;
                tok_loss -= pass.trace.total;
                toks += y.len();
                // Ascend w·Σ log π, i.e. descend the loss.
                actor_backward(params, &feats[i], y, &pass, &vec![-w; y.len()], &vec![0.0; y.len()], &mut g);
            }
            clip_grad_norm(&mut g, cfg.grad_clip);
            opt.step(&mut params.theta, &g);
            report.batch_loss.push(loss);
        }
        report.epoch_token_loss.push(tok_loss / toks.max(1) as f64);
    }
    Ok(report)
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint was written for vocabulary {found}, this build uses {expected}")]
    VocabMismatch { found: String, expected: String },
    #[error("checkpoint config hash does not match its contents")]
    HashMismatch,
}

/// Versioned JSON checkpoint of actor and (optionally) critic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub vocab_version: String,
    pub config_hash: String,
    pub actor: PolicyParams,
    pub critic: Option<ValueParams>,
}

pub fn config_hash(c: &NetConfig) -> String {
    let s = serde_json::to_string(c).expect("config serializes");
    Sha256::digest(s.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(actor: PolicyParams, critic: Option<ValueParams>) -> Self {
        Checkpoint { vocab_version: VOCAB_VERSION.into(), config_hash: config_hash(&actor.config), actor, critic }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let c: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.vocab_version != VOCAB_VERSION {
            return Err(CheckpointError::VocabMismatch { found: c.vocab_version, expected: VOCAB_VERSION.into() });
        }
        if c.config_hash != config_hash(&c.actor.config) {
            return Err(CheckpointError::HashMismatch);
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests;

pub mod gradcheck {
    //! Central finite-difference oracle for analytic gradients.

    /// Worst relative error between `analytic[i]` and a central difference of
    /// `f` at each index in `idx`. Pairs where both sides are below `1e-6` and
    /// agree to within `1e-9` absolute count as exact.
    pub fn max_rel_error(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], idx: &[usize], eps: f64) -> f64 {
        let mut xp = x.to_vec();
        let mut worst: f64 = 0.0;
        for &i in idx {
            let orig = xp[i];
            xp[i] = orig + eps;
            let fp = f(&xp);
            xp[i] = orig - eps;
            let fm = f(&xp);
            xp[i] = orig;
            let num = (fp - fm) / (2.0 * eps);
            let diff = (num - analytic[i]).abs();
            let scale = num.abs().max(analytic[i].abs());
            if diff < 1e-9 && scale < 1e-6 {
                continue;
            }
            worst = worst.max(diff / scale);
        }
        worst
    }

    /// Up to `n` indices with nonzero gradient plus `n / 4` arbitrary ones.
    pub fn probe_indices(g: &[f64], n: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let nz: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let mut out: Vec<usize> = nz.choose_multiple(rng, n).copied().collect();
        out.extend((0..n / 4).map(|_| rng.gen_range(0..g.len())));
        out
    }

    use crate::env_high::{reset, task_suite};
    use crate::env_low::{manip_suite, reset_low};
    use crate::types::Split;
    use crate::vocab::{vocab, TokenId};

    use super::{NetConfig, PolicyParams, ValueParams};

    /// Instruction plus first observation of a random task from either simulator.
    pub fn random_prompt(rng: &mut impl rand::Rng) -> Vec<TokenId> {
        let seed = rng.gen_range(0..1000);
        if rng.gen_bool(0.5) {
            let t = &task_suite(Split::Seen, 1, seed)[0];
            let (_, obs) = reset(t, t.seed).expect("suite task resets");
            [t.instruction_tokens(), obs.tokens].concat()
        } else {
            let t = &manip_suite(Split::Seen, 1, seed)[0];
            let (_, obs) = reset_low(t, t.seed).expect("suite task resets");
            [t.instruction_tokens(), obs.tokens].concat()
        }
    }

    /// Uniformly random tokens, `1..=max_len` of them.
    pub fn random_response(rng: &mut impl rand::Rng, max_len: usize) -> Vec<TokenId> {
        let n = rng.gen_range(1..=max_len);
        (0..n).map(|_| TokenId(rng.gen_range(0..vocab().len()) as u16)).collect()
    }

    fn jitter(x: &mut [f64], scale: f64, rng: &mut impl rand::Rng) {
        for v in x {
            *v += scale * (rng.gen::<f64>() * 2.0 - 1.0);
        }
    }

    /// Small network with every parameter perturbed off its initial value.
    pub fn perturbed_actor(hidden: usize, rng: &mut impl rand::Rng) -> PolicyParams {
        let mut p = PolicyParams::init(NetConfig { hidden, ..NetConfig::default() }, rng.gen());
        jitter(&mut p.theta, 0.1, rng);
        p
    }

    pub fn perturbed_critic(hidden: usize, rng: &mut impl rand::Rng) -> ValueParams {
        let mut p = ValueParams::init(NetConfig { hidden, ..NetConfig::default() }, rng.gen());
        jitter(&mut p.phi, 0.1, rng);
        p
    }
}
