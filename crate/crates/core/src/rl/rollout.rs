//! Single-episode rollouts of the token policy in either simulator.

use rand::Rng;

use crate::context::{build_input, ContextPolicy, EntryResponse, EpisodeLog, HistoryBuffer, HistoryEntry};
use crate::env_high::{MiniHouse, TaskSpec};
use crate::env_low::{MiniTable, ManipTask};
use crate::policy::{featurize, sample_response, value_token, value_turn, Features, LogProbTrace, PolicyParams, ValueParams};
use crate::response::{decode_response, ResponseAction, MAX_RESPONSE_TOKENS};
use crate::rewards::{turn_reward_high, turn_reward_low, RewardConfig, SubgoalLedger};
use crate::types::{EnvKind, Split, Terminal, Trajectory, Turn};

use super::GaeMode;

/// A task from either simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTask {
    High(TaskSpec),
    Low(ManipTask),
}

impl AnyTask {
    pub fn env(&self) -> EnvKind {
        match self {
            AnyTask::High(_) => EnvKind::High,
            AnyTask::Low(_) => EnvKind::Low,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            AnyTask::High(t) => t.seed,
            AnyTask::Low(t) => t.seed,
        }
    }

    pub fn instruction(&self) -> &str {
        match self {
            AnyTask::High(t) => &t.instruction,
            AnyTask::Low(t) => &t.instruction,
        }
    }
}

/// `n` tasks of one split.
pub fn task_pool(env: EnvKind, split: Split, n: usize, seed: u64) -> Vec<AnyTask> {
    match env {
        EnvKind::High => crate::env_high::task_suite(split, n, seed).into_iter().map(AnyTask::High).collect(),
        EnvKind::Low => crate::env_low::manip_suite(split, n, seed).into_iter().map(AnyTask::Low).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    pub context: ContextPolicy,
    pub reward: RewardConfig,
    /// Which critic head to evaluate (ignored without a critic).
    pub mode: GaeMode,
    /// Sampling temperature; 0 decodes greedily.
    pub temperature: f64,
}

/// A finished episode with what the update needs per turn.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub features: Vec<Features>,
    pub traces: Vec<LogProbTrace>,
    pub log: EpisodeLog,
}

enum Sim {
    High(MiniHouse),
    Low(MiniTable, Vec<String>),
}

/// Plays one episode from the task's own reset seed.
pub fn run_episode(
    task: &AnyTask,
    actor: &PolicyParams,
    critic: Option<&ValueParams>,
    opts: &EpisodeOptions,
    rng: &mut impl Rng,
) -> Episode {
    let (mut sim, instruction, horizon, num_subgoals) = match task {
        AnyTask::High(t) => {
            let env = MiniHouse::new(t.clone(), t.seed).expect("suite tasks reset");
            (Sim::High(env), t.instruction_tokens(), t.horizon, t.subgoals.len())
        }
        AnyTask::Low(t) => {
            let env = MiniTable::new(t.clone(), t.seed).expect("suite tasks reset");
            let targets = t.target_objects();
            let n = targets.len();
            (Sim::Low(env, targets), t.instruction_tokens(), t.horizon, n)
        }
    };
    let mode = task.env();
    let mut ledger = SubgoalLedger::default();
    let mut buf = HistoryBuffer::for_policy(&opts.context);
    let mut log = EpisodeLog { instruction: instruction.clone(), observations: Vec::new(), entries: Vec::new() };
    let (mut turns, mut features, mut traces) = (Vec::new(), Vec::new(), Vec::new());
    let mut terminal = Terminal::StepLimit;
    for t in 0..horizon {
        let obs = match &sim {
            Sim::High(e) => e.observe(),
            Sim::Low(e, _) => e.observe(),
        };
        let x = build_input(&instruction, &buf, &obs.tokens, &opts.context);
        let feats = featurize(&x);
        let (y, trace) = sample_response(actor, &feats, rng, opts.temperature, MAX_RESPONSE_TOKENS);
        let parsed = decode_response(&y, mode);
        let (feedback, reward, q, success) = match &mut sim {
            Sim::High(e) => {
                let action = match &parsed {
                    Ok(r) => match &r.action {
                        ResponseAction::High(a) => Some(a.clone()),
                        ResponseAction::Low(_) => None,
                    },
                    Err(_) => None,
                };
                let out = e.step(action.as_ref());
                let r = turn_reward_high(out.success, &out.subgoal_events, &out.feedback, &mut ledger, &opts.reward);
                (out.feedback, r, None, out.success)
            }
            Sim::Low(e, targets) => {
                let action = match &parsed {
                    Ok(r) => match &r.action {
                        ResponseAction::Low(a) => Some(*a),
                        ResponseAction::High(_) => None,
                    },
                    Err(_) => None,
                };
                let before = e.state.clone();
                let out = e.step(action.as_ref());
                let (r, q) = turn_reward_low(&parsed, &before, &e.state, out.success, targets, &mut ledger, &opts.reward);
                (out.feedback, r, Some(q), out.success)
            }
        };
        let (turn_value, token_values) = match (critic, opts.mode) {
            (Some(c), GaeMode::TurnLevel) => (value_turn(c, &feats), Vec::new()),
            (Some(c), GaeMode::TokenLevel) => (0.0, value_token(c, &feats, &y)),
            (None, _) => (0.0, Vec::new()),
        };
        let entry = HistoryEntry {
            step_id: t,
            response: match &parsed {
                Ok(r) => EntryResponse::Parsed(r.clone()),
                Err(_) => EntryResponse::Raw(y.clone()),
            },
            feedback: feedback.clone(),
        };
        buf.push(entry.clone());
        log.observations.push(obs.tokens);
        log.entries.push(entry);
        turns.push(Turn {
            state_input: x,
            response: y,
            parsed,
            feedback,
            reward,
            q,
            turn_value,
            token_values,
            advantage: 0.0,
        });
        features.push(feats);
        traces.push(trace);
        if success {
            terminal = Terminal::Success;
            break;
        }
    }
    let reached = ledger.len().min(num_subgoals);
    Episode { trajectory: Trajectory::new(turns, terminal, num_subgoals, reached), features, traces, log }
}
