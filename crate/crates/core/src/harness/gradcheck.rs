//! Finite-difference report over every analytic gradient in the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::policy::gradcheck::{max_rel_error, perturbed_actor, perturbed_critic, probe_indices, random_prompt, random_response};
use crate::policy::{actor_forward, featurize, log_prob_and_grad, value_and_grad_turn, value_token, value_token_and_grad, value_turn, PolicyParams, ValueParams};
use crate::rl::{ppo_policy_objective, value_loss, GaeMode, PolicyTerms, TurnRecord};

pub const TOLERANCE: f64 = 1e-3;
const HIDDEN: usize = 6;
const PROBES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradKind {
    LogProb,
    TurnValue,
    TokenValue,
    PolicyLoss,
    ValueLoss,
}

impl GradKind {
    pub const ALL: [GradKind; 5] = [GradKind::LogProb, GradKind::TurnValue, GradKind::TokenValue, GradKind::PolicyLoss, GradKind::ValueLoss];

    pub fn name(self) -> &'static str {
        match self {
            GradKind::LogProb => "log_prob",
            GradKind::TurnValue => "turn_value",
            GradKind::TokenValue => "token_value",
            GradKind::PolicyLoss => "policy_loss",
            GradKind::ValueLoss => "value_loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub kind: GradKind,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn record(rng: &mut impl Rng, actor: &PolicyParams, drift: f64, per_token: bool) -> TurnRecord {
    let feats = featurize(&random_prompt(rng));
    let y = random_response(rng, 6);
    let lp = actor_forward(actor, &feats, &y).trace.token_logp;
    let n = y.len();
    let nv = if per_token { n } else { 1 };
    let a: f64 = rng.gen_range(-2.0..2.0);
    TurnRecord {
        feats,
        old_logp: lp.iter().map(|x| x + rng.gen_range(-drift..=drift)).collect(),
        ref_logp: Some(lp.iter().map(|x| x + rng.gen_range(-0.3..0.3)).collect()),
        reward: 0.0,
        advantages: vec![a; n],
        old_values: (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        targets: (0..nv).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        response: y,
    }
}

fn actor_err(p: &PolicyParams, g: &[f64], f: impl Fn(&PolicyParams) -> f64, eps: f64, rng: &mut impl Rng) -> f64 {
    let idx = probe_indices(g, PROBES, rng);
    max_rel_error(|th| f(&PolicyParams { config: p.config, theta: th.to_vec() }), &p.theta, g, &idx, eps)
}

fn critic_err(c: &ValueParams, g: &[f64], f: impl Fn(&ValueParams) -> f64, eps: f64, rng: &mut impl Rng) -> f64 {
    let idx = probe_indices(g, PROBES, rng);
    max_rel_error(|ph| f(&ValueParams { config: c.config, phi: ph.to_vec() }), &c.phi, g, &idx, eps)
}

/// Worst relative error of one random instance.
pub fn check_instance(kind: GradKind, rng: &mut impl Rng) -> f64 {
    match kind {
        GradKind::LogProb => {
            let p = perturbed_actor(HIDDEN, rng);
            let f = featurize(&random_prompt(rng));
            let y = random_response(rng, 6);
            let (_, g) = log_prob_and_grad(&p, &f, &y);
            actor_err(&p, &g, |q| actor_forward(q, &f, &y).trace.total, 1e-5, rng)
        }
        GradKind::TurnValue => {
            let c = perturbed_critic(HIDDEN, rng);
            let f = featurize(&random_prompt(rng));
            let (_, g) = value_and_grad_turn(&c, &f);
            critic_err(&c, &g, |q| value_turn(q, &f), 1e-5, rng)
        }
        GradKind::TokenValue => {
            let c = perturbed_critic(HIDDEN, rng);
            let f = featurize(&random_prompt(rng));
            let y = random_response(rng, 6);
            let w: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut g = vec![0.0; c.len()];
            value_token_and_grad(&c, &f, &y, &w, &mut g);
            critic_err(&c, &g, |q| value_token(q, &f, &y).iter().zip(&w).map(|(v, w)| v * w).sum(), 1e-5, rng)
        }
        GradKind::PolicyLoss => {
            let p = perturbed_actor(HIDDEN, rng);
            let recs: Vec<TurnRecord> = (0..3).map(|_| record(rng, &p, 0.4, false)).collect();
            let batch: Vec<&TurnRecord> = recs.iter().collect();
            let terms = PolicyTerms { clip_eps: 0.2, entropy_coef: 0.05, kl_coef: 0.1 };
            let (_, g) = ppo_policy_objective(&p, &batch, &terms);
            actor_err(&p, &g, |q| ppo_policy_objective(q, &batch, &terms).0.objective, 1e-6, rng)
        }
        GradKind::ValueLoss => {
            let mode = if rng.gen_bool(0.5) { GaeMode::TurnLevel } else { GaeMode::TokenLevel };
            let p = perturbed_actor(HIDDEN, rng);
            let c = perturbed_critic(HIDDEN, rng);
            let recs: Vec<TurnRecord> = (0..3).map(|_| record(rng, &p, 0.0, mode == GaeMode::TokenLevel)).collect();
            let batch: Vec<&TurnRecord> = recs.iter().collect();
            let (_, g) = value_loss(&c, &batch, 0.5, mode);
            critic_err(&c, &g, |q| value_loss(q, &batch, 0.5, mode).0, 1e-6, rng)
        }
    }
}

/// `instances` random checks of every gradient kind.
pub fn run_gradcheck(instances: usize, seed: u64) -> Vec<GradReport> {
    GradKind::ALL
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let mut rng = super::harness_rng(seed, k as u64);
            let worst = (0..instances).map(|_| check_instance(kind, &mut rng)).fold(0.0, f64::max);
            GradReport { kind, instances, max_rel_error: worst }
        })
        .collect()
}
