//! Turn-level PPO: advantage estimation, clipped losses, parallel rollouts
//! and the training loop with critic warmup.

pub mod gae;
pub mod loss;
pub mod rollout;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gae::{broadcast_advantage, gae_token, gae_turn, gae_turn_sum, place_turn_reward, td_residuals};
pub use loss::{ppo_policy_objective, value_loss, PolicyStats, PolicyTerms};
pub use rollout::{run_episode, task_pool, AnyTask, Episode, EpisodeOptions};

use crate::context::{ContextPolicy, ContextPolicyError};
use crate::policy::{actor_forward, clip_grad_norm, Adam, Features, PolicyParams, ValueParams};
use crate::rewards::{RewardConfig, RewardConfigError};
use crate::types::EnvKind;
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error("{rewards} rewards but {values} values")]
    LengthMismatch { rewards: usize, values: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Reward(#[from] RewardConfigError),
    #[error(transparent)]
    Context(#[from] ContextPolicyError),
    #[error("no training tasks")]
    NoTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaeMode {
    #[serde(alias = "turn")]
    TurnLevel,
    #[serde(alias = "token")]
    TokenLevel,
}

impl fmt::Display for GaeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GaeMode::TurnLevel => "turn",
            GaeMode::TokenLevel => "token",
        })
    }
}

impl FromStr for GaeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "turn" | "turn_level" => Ok(GaeMode::TurnLevel),
            "token" | "token_level" => Ok(GaeMode::TokenLevel),
            _ => Err(format!("unknown GAE mode {s:?} (expected turn or token)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub mode: GaeMode,
}

impl Default for GaeConfig {
    fn default() -> Self {
        GaeConfig { gamma: 0.99, lambda: 0.99, mode: GaeMode::TurnLevel }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(RlError::Config(format!("gamma and lambda must lie in [0, 1], got {} and {}", self.gamma, self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub value_clip: f64,
    pub entropy_coef: f64,
    pub grad_clip_norm: f64,
    pub epochs_per_batch: usize,
    pub minibatch: usize,
    pub critic_warmup_iters: usize,
    /// Parallel episodes per iteration; `None` picks 50 (high) or 48 (low).
    pub rollout_envs: Option<usize>,
    pub total_iters: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub normalize_advantages: bool,
    /// Penalty on `log π − log π_ref` against the starting policy.
    pub kl_coef: f64,
    pub temperature: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            value_clip: 0.5,
            entropy_coef: 0.001,
            grad_clip_norm: 1.0,
            epochs_per_batch: 1,
            minibatch: 16,
            critic_warmup_iters: 3,
            rollout_envs: None,
            total_iters: 10,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            normalize_advantages: false,
            kl_coef: 0.0,
            temperature: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn envs_for(&self, env: EnvKind) -> usize {
        self.rollout_envs.unwrap_or(match env {
            EnvKind::High => 50,
            EnvKind::Low => 48,
        })
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if self.clip_eps <= 0.0 {
            return Err(RlError::Config("clip_eps must be positive".into()));
        }
        if self.minibatch == 0 {
            return Err(RlError::Config("minibatch must be at least 1".into()));
        }
        if self.rollout_envs == Some(0) {
            return Err(RlError::Config("rollout_envs must be at least 1".into()));
        }
        if self.value_clip <= 0.0 || self.grad_clip_norm <= 0.0 || self.temperature < 0.0 {
            return Err(RlError::Config("value_clip and grad_clip_norm must be positive, temperature non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub gae: GaeConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub context: ContextPolicy,
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        self.gae.validate()?;
        self.ppo.validate()?;
        self.reward.validate()?;
        self.context.validate()?;
        Ok(())
    }
}

/// One buffer entry: a turn's input features, sampled response, rollout
/// log-probs and values, and its advantage and value targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    pub feats: Features,
    pub response: Vec<TokenId>,
    pub old_logp: Vec<f64>,
    pub ref_logp: Option<Vec<f64>>,
    pub reward: f64,
    /// Per-token advantages (constant within a turn in turn mode).
    pub advantages: Vec<f64>,
    /// Value predictions at rollout time: one per turn or one per token.
    pub old_values: Vec<f64>,
    /// Detached regression targets `A + V_old`, shaped like `old_values`.
    pub targets: Vec<f64>,
}

/// Fills advantages into an episode's trajectory and emits its buffer records.
pub fn episode_records(ep: &mut Episode, gae: &GaeConfig) -> Result<Vec<TurnRecord>, RlError> {
    let turns = &mut ep.trajectory.turns;
    let rewards: Vec<f64> = turns.iter().map(|t| t.reward.total).collect();
    let (adv, old_values): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match gae.mode {
        GaeMode::TurnLevel => {
            let values: Vec<f64> = turns.iter().map(|t| t.turn_value).collect();
            let a = gae_turn(&td_residuals(&rewards, &values, gae.gamma)?, gae.gamma, gae.lambda);
            for (t, &x) in turns.iter_mut().zip(&a) {
                t.advantage = x;
            }
            let per_tok = turns.iter().zip(&a).map(|(t, &x)| broadcast_advantage(x, t.response.len())).collect();
            (per_tok, values.into_iter().map(|v| vec![v]).collect())
        }
        GaeMode::TokenLevel => {
            let r: Vec<Vec<f64>> = turns.iter().map(|t| place_turn_reward(t.reward.total, t.response.len())).collect();
            let v: Vec<Vec<f64>> = turns.iter().map(|t| t.token_values.clone()).collect();
            let a = gae_token(&r, &v, gae.gamma, gae.lambda)?;
            for (t, x) in turns.iter_mut().zip(&a) {
                t.advantage = x.first().copied().unwrap_or(0.0);
            }
            (a, v)
        }
    };
    Ok(turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let targets = match gae.mode {
                GaeMode::TurnLevel => vec![adv[i][0] + old_values[i][0]],
                GaeMode::TokenLevel => adv[i].iter().zip(&old_values[i]).map(|(a, v)| a + v).collect(),
            };
            TurnRecord {
                feats: ep.features[i].clone(),
                response: t.response.clone(),
                old_logp: ep.traces[i].token_logp.clone(),
                ref_logp: None,
                reward: t.reward.total,
                advantages: adv[i].clone(),
                old_values: old_values[i].clone(),
                targets,
            }
        })
        .collect())
}

/// Per-iteration training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterMetrics {
    pub iter: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub subgoal_rate: f64,
    pub invalid_rate: f64,
    /// Mean matching ratio (low-level only).
    pub mean_q: Option<f64>,
    pub mean_input_tokens: f64,
    /// Negated policy objective; absent while the actor is frozen.
    pub policy_loss: Option<f64>,
    pub value_loss: f64,
    /// Mean negative log-prob of sampled tokens.
    pub entropy: f64,
}

pub const METRICS_HEADER: &str =
    "iter,mean_return,success_rate,subgoal_rate,invalid_rate,mean_q,mean_input_tokens,policy_loss,value_loss,entropy";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl IterMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.mean_return,
            self.success_rate,
            self.subgoal_rate,
            self.invalid_rate,
            opt(self.mean_q),
            self.mean_input_tokens,
            opt(self.policy_loss),
            self.value_loss,
            self.entropy
        )
    }
}

pub fn metrics_csv(rows: &[IterMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Episode statistics shared by training metrics and evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub subgoal_rate: f64,
    pub invalid_rate: f64,
    pub mean_q: Option<f64>,
    pub mean_input_tokens: f64,
}

pub fn episode_stats(eps: &[Episode]) -> EpisodeStats {
    let n = eps.len().max(1) as f64;
    let turns: Vec<&crate::types::Turn> = eps.iter().flat_map(|e| &e.trajectory.turns).collect();
    let nt = turns.len().max(1) as f64;
    let qs: Vec<f64> = turns.iter().filter_map(|t| t.q).collect();
    EpisodeStats {
        episodes: eps.len(),
        mean_return: eps.iter().map(|e| e.trajectory.episode_return).sum::<f64>() / n,
        success_rate: eps.iter().filter(|e| e.trajectory.success()).count() as f64 / n,
        subgoal_rate: eps
            .iter()
            .map(|e| {
                let t = &e.trajectory;
                if t.num_subgoals == 0 {
                    t.success() as u8 as f64
                } else {
                    t.subgoals_reached as f64 / t.num_subgoals as f64
                }
            })
            .sum::<f64>()
            / n,
        invalid_rate: turns.iter().filter(|t| !t.feedback.valid).count() as f64 / nt,
        mean_q: (!qs.is_empty()).then(|| qs.iter().sum::<f64>() / qs.len() as f64),
        mean_input_tokens: turns.iter().map(|t| t.state_input.len() as f64).sum::<f64>() / nt,
    }
}

/// Seed for stream `(a, b)` derived from a base seed.
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(a.wrapping_mul(1 << 20) ^ b);
    r.gen()
}

/// Plays `tasks[i]` with its own RNG stream; output order follows `tasks`.
pub fn rollout_batch(
    tasks: &[AnyTask],
    actor: &PolicyParams,
    critic: Option<&ValueParams>,
    opts: &EpisodeOptions,
    seed: u64,
) -> Vec<Episode> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 1, i as u64));
            run_episode(t, actor, critic, opts, &mut rng)
        })
        .collect()
}

pub struct TrainOutput {
    pub actor: PolicyParams,
    pub critic: ValueParams,
    pub metrics: Vec<IterMetrics>,
}

/// PPO from `actor` on `tasks`. The critic defaults to a copy of the actor's
/// trunk with zero heads. The actor is frozen for the first
/// `critic_warmup_iters` iterations.
pub fn train(
    mut actor: PolicyParams,
    critic: Option<ValueParams>,
    tasks: &[AnyTask],
    cfg: &RlConfig,
    seed: u64,
) -> Result<TrainOutput, RlError> {
    cfg.validate()?;
    let first = tasks.first().ok_or(RlError::NoTasks)?;
    let env = first.env();
    let mut critic = critic.unwrap_or_else(|| ValueParams::from_actor(&actor));
    let reference = (cfg.ppo.kl_coef != 0.0).then(|| actor.clone());
    let mut actor_opt = Adam::new(actor.len(), cfg.ppo.actor_lr);
    let mut critic_opt = Adam::new(critic.len(), cfg.ppo.critic_lr);
    let opts = EpisodeOptions {
        context: cfg.context,
        reward: cfg.reward.clone(),
        mode: cfg.gae.mode,
        temperature: cfg.ppo.temperature,
    };
    let terms = PolicyTerms { clip_eps: cfg.ppo.clip_eps, entropy_coef: cfg.ppo.entropy_coef, kl_coef: cfg.ppo.kl_coef };
    let n_envs = cfg.ppo.envs_for(env);
    let mut metrics = Vec::with_capacity(cfg.ppo.total_iters);
    for iter in 0..cfg.ppo.total_iters {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0, iter as u64));
        let batch_tasks: Vec<AnyTask> = (0..n_envs).map(|_| tasks.choose(&mut rng).cloned().expect("nonempty")).collect();
        let mut eps = rollout_batch(&batch_tasks, &actor, Some(&critic), &opts, stream_seed(seed, 2, iter as u64));
        let mut buffer = Vec::new();
        for ep in &mut eps {
            buffer.extend(episode_records(ep, &cfg.gae)?);
        }
        if let Some(r) = &reference {
            for rec in &mut buffer {
                rec.ref_logp = Some(actor_forward(r, &rec.feats, &rec.response).trace.token_logp);
            }
        }
        if cfg.ppo.normalize_advantages {
            normalize(&mut buffer);
        }
        let update_actor = iter >= cfg.ppo.critic_warmup_iters;
        let (mut pl, mut vl, mut nb) = (0.0, 0.0, 0usize);
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        for _ in 0..cfg.ppo.epochs_per_batch {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.ppo.minibatch) {
                let mb: Vec<&TurnRecord> = chunk.iter().map(|&i| &buffer[i]).collect();
                let (l, mut g) = value_loss(&critic, &mb, cfg.ppo.value_clip, cfg.gae.mode);
                clip_grad_norm(&mut g, cfg.ppo.grad_clip_norm);
                critic_opt.step(&mut critic.phi, &g);
                vl += l;
                if update_actor {
                    let (st, mut g) = ppo_policy_objective(&actor, &mb, &terms);
                    // Adam descends, so hand it -∂J/∂θ.
                    g.iter_mut().for_each(|x| *x = -*x);
                    clip_grad_norm(&mut g, cfg.ppo.grad_clip_norm);
                    actor_opt.step(&mut actor.theta, &g);
                    pl -= st.objective;
                }
                nb += 1;
            }
        }
        let s = episode_stats(&eps);
        let toks: usize = buffer.iter().map(|r| r.response.len()).sum();
        metrics.push(IterMetrics {
            iter,
            mean_return: s.mean_return,
            success_rate: s.success_rate,
            subgoal_rate: s.subgoal_rate,
            invalid_rate: s.invalid_rate,
            mean_q: s.mean_q,
            mean_input_tokens: s.mean_input_tokens,
            policy_loss: update_actor.then(|| pl / nb.max(1) as f64),
            value_loss: vl / nb.max(1) as f64,
            entropy: -buffer.iter().flat_map(|r| &r.old_logp).sum::<f64>() / toks.max(1) as f64,
        });
    }
    Ok(TrainOutput { actor, critic, metrics })
}

fn normalize(buffer: &mut [TurnRecord]) {
    let all: Vec<f64> = buffer.iter().flat_map(|r| r.advantages.iter().copied()).collect();
    if all.len() < 2 {
        return;
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let sd = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt().max(1e-8);
    for r in buffer {
        r.advantages.iter_mut().for_each(|a| *a = (*a - mean) / sd);
    }
}
