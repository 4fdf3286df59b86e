//! Prior-data factory for supervised pre-training: expert trajectories (raw
//! and reasoning-augmented), environment-anchored QA and an adapter for
//! external corpora. Every sample exists in token form (for training) and
//! as a JSONL text record.

pub mod alfred;
pub mod anchored;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{build_input, ContextPolicy, EntryResponse, HistoryBuffer, HistoryEntry, HistoryRecord};
use crate::env_high::{expert_plan_high, ActionCatalog, MiniHouse, TaskSpec};
use crate::env_low::palette::Color;
use crate::env_low::{additional_info, expert_plan_low, parse_additional_info, MiniTable, ManipTask, TableState};
use crate::response::{
    decode_response, encode_response, generation_text, parse_generation, parse_thinking, PlanStep, Reflection,
    ResponseAction, StructuredResponse, VisualEntry,
};
use crate::rewards::{subgoal_reward_low, RewardConfig, SubgoalLedger};
use crate::types::{EnvKind, Feedback, Split};
use crate::vocab::{vocab, Marker, Phase, QueryWord, Tag, TokenId, MAX_SUBGOAL_INDEX};

pub use alfred::{map_alfred_action, AlfredAction, AlfredContext, UnknownAction};
pub use anchored::{gen_grounding, gen_masked_action, gen_reorder, gen_visual_description, ActionSeq, GroundingKind, QaPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    RawTraj,
    TrajAug,
    MaskedAction,
    Reorder,
    AbsGround,
    RelGround,
    CombGround,
    ExternalStub,
}

impl PriorKind {
    pub const ALL: [PriorKind; 8] = [
        PriorKind::RawTraj,
        PriorKind::TrajAug,
        PriorKind::MaskedAction,
        PriorKind::Reorder,
        PriorKind::AbsGround,
        PriorKind::RelGround,
        PriorKind::CombGround,
        PriorKind::ExternalStub,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PriorKind::RawTraj => "raw",
            PriorKind::TrajAug => "traj-aug",
            PriorKind::MaskedAction => "masked",
            PriorKind::Reorder => "reorder",
            PriorKind::AbsGround => "abs-ground",
            PriorKind::RelGround => "rel-ground",
            PriorKind::CombGround => "comb-ground",
            PriorKind::ExternalStub => "external",
        }
    }

    pub fn is_trajectory(self) -> bool {
        matches!(self, PriorKind::RawTraj | PriorKind::TrajAug)
    }

    /// Grounding QA needs a tabletop scene.
    pub fn low_only(self) -> bool {
        matches!(self, PriorKind::AbsGround | PriorKind::RelGround | PriorKind::CombGround)
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PriorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PriorKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| format!("unknown prior kind {s:?} (expected one of raw, traj-aug, masked, reorder, abs-ground, rel-ground, comb-ground, external)"))
    }
}

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("external annotator has no response file")]
    AnnotatorUnavailable,
    #[error("annotation {index}: {reason}")]
    Annotation { index: usize, reason: String },
    #[error("{kind} priors need the low-level environment")]
    KindEnvMismatch { kind: PriorKind },
    #[error("{kind} corpora are not generated; use the external adapter")]
    NotGenerated { kind: PriorKind },
    #[error("expert failed: {0}")]
    Expert(String),
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// JSONL wire record. Trajectory records carry `instruction`,
/// `interaction_history` and (low-level) `additional_info`; every record
/// carries the prompt/generation text and the token rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorRecord {
    pub kind: PriorKind,
    pub env: EnvKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction_history: Option<Vec<HistoryRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub additional_info: Option<String>,
    pub prompt: String,
    pub generation: String,
    pub input_tokens: String,
    pub target_tokens: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// One supervised pair for prior learning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorSample {
    pub kind: PriorKind,
    pub env: EnvKind,
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub record: PriorRecord,
}

impl PriorSample {
    fn new(kind: PriorKind, env: EnvKind, prompt: Vec<TokenId>, target: Vec<TokenId>, text: TextPart) -> Self {
        let v = vocab();
        let record = PriorRecord {
            kind,
            env,
            instruction: text.instruction,
            interaction_history: text.history,
            additional_info: text.additional_info,
            prompt: text.prompt,
            generation: text.generation,
            input_tokens: v.render(&prompt),
            target_tokens: v.render(&target),
            meta: text.meta,
        };
        PriorSample { kind, env, prompt, target, record }
    }

    /// Rebuilds a sample from its record; token strings must be in-vocabulary.
    pub fn from_record(record: PriorRecord, line: usize) -> Result<Self, PriorError> {
        let v = vocab();
        let parse = |s: &str, what: &str| {
            v.parse_surfaces(s).map_err(|tok| PriorError::Schema { line, reason: format!("{what}: unknown token {tok:?}") })
        };
        let prompt = parse(&record.input_tokens, "input_tokens")?;
        let target = parse(&record.target_tokens, "target_tokens")?;
        if target.is_empty() {
            return Err(PriorError::Schema { line, reason: "empty target".into() });
        }
        Ok(PriorSample { kind: record.kind, env: record.env, prompt, target, record })
    }
}

#[derive(Default)]
struct TextPart {
    instruction: Option<String>,
    history: Option<Vec<HistoryRecord>>,
    additional_info: Option<String>,
    prompt: String,
    generation: String,
    meta: BTreeMap<String, String>,
}

// ---------------------------------------------------------------------------
// Expert recording.

/// One recorded expert step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertStep {
    pub observation: Vec<TokenId>,
    /// Observation text shown before the action.
    pub observation_text: String,
    /// Tabletop state before the action (low-level only).
    pub scene: Option<TableState>,
    pub action: ResponseAction,
    pub feedback: Feedback,
    /// Subgoals first reached by this step.
    pub fresh_subgoals: usize,
    /// Expert plan from this step on (starts with `action` unless off-plan).
    pub planned: Vec<ResponseAction>,
    pub phase: Option<Phase>,
    /// Exploration step injected by the recorder; never a training target.
    pub off_plan: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertEpisode {
    pub env: EnvKind,
    pub instruction: String,
    pub instruction_tokens: Vec<TokenId>,
    pub seed: u64,
    pub steps: Vec<ExpertStep>,
    pub success: bool,
}

impl ExpertEpisode {
    pub fn action_seq(&self) -> ActionSeq {
        ActionSeq {
            env: self.env,
            instruction: self.instruction.clone(),
            instruction_tokens: self.instruction_tokens.clone(),
            actions: self.steps.iter().filter(|s| !s.off_plan).map(|s| s.action.clone()).collect(),
        }
    }
}

/// Recorder options. `noise` is the per-step chance (high-level only) of an
/// exploratory catalog action, after which the expert replans; it puts
/// recovery situations into the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecorderConfig {
    pub noise: f64,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        RecorderConfig { noise: 0.0 }
    }
}

/// Runs the scripted expert on a MiniHouse task.
pub fn record_expert_high(task: &TaskSpec, seed: u64, cfg: &RecorderConfig) -> Result<ExpertEpisode, PriorError> {
    let mut env = MiniHouse::new(task.clone(), seed).map_err(|e| PriorError::Expert(e.to_string()))?;
    let catalog = ActionCatalog::minihouse();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11C_E5E5);
    let mut plan = expert_plan_high(task, &env.state).map_err(|e| PriorError::Expert(e.to_string()))?;
    let mut steps = Vec::new();
    let mut success = false;
    let mut noisy_steps = 0;
    while !success && env.state.step < task.horizon && !plan.is_empty() {
        let remaining = (task.horizon - env.state.step) as usize;
        // An exploratory action is kept only if the expert can still finish
        // from wherever it leads.
        let mut detour = None;
        if noisy_steps < 3 && rng.gen_bool(cfg.noise.clamp(0.0, 1.0)) {
            let a = catalog.get(rng.gen_range(0..catalog.len())).cloned().expect("catalog entry");
            let (next, out) = crate::env_high::step(&env.state, task, Some(&a));
            if !out.success {
                if let Ok(p) = expert_plan_high(task, &next) {
                    if p.len() < remaining {
                        detour = Some((a, p));
                    }
                }
            }
        }
        let off_plan = detour.is_some();
        let (action, next_plan) = match detour {
            Some((a, p)) => {
                noisy_steps += 1;
                (a, p)
            }
            None => (plan[0].clone(), plan[1..].to_vec()),
        };
        let obs = env.observe();
        let out = env.step(Some(&action));
        success = out.success;
        steps.push(ExpertStep {
            observation: obs.tokens,
            observation_text: obs.text,
            scene: None,
            action: ResponseAction::High(action),
            feedback: out.feedback,
            fresh_subgoals: out.subgoal_events.len(),
            planned: plan.into_iter().map(ResponseAction::High).collect(),
            phase: None,
            off_plan,
        });
        plan = next_plan;
    }
    Ok(ExpertEpisode {
        env: EnvKind::High,
        instruction: task.instruction.clone(),
        instruction_tokens: task.instruction_tokens(),
        seed,
        steps,
        success,
    })
}

/// Runs the five-waypoint expert on a MiniTable task.
pub fn record_expert_low(task: &ManipTask, seed: u64) -> Result<ExpertEpisode, PriorError> {
    let mut env = MiniTable::new(task.clone(), seed).map_err(|e| PriorError::Expert(e.to_string()))?;
    let plan = expert_plan_low(task, &env.state).map_err(|e| PriorError::Expert(e.to_string()))?;
    let cfg = RewardConfig::default();
    let targets = task.target_objects();
    let mut ledger = SubgoalLedger::default();
    let mut steps = Vec::new();
    let mut success = false;
    for (i, a) in plan.iter().enumerate() {
        let obs = env.observe();
        let scene = env.state.clone();
        let out = env.step(Some(a));
        let fresh = (subgoal_reward_low(&env.state, &targets, &mut ledger, &cfg) / cfg.subgoal_unit).round() as usize;
        success = out.success;
        steps.push(ExpertStep {
            observation: obs.tokens,
            observation_text: obs.text,
            scene: Some(scene),
            action: ResponseAction::Low(*a),
            feedback: out.feedback,
            fresh_subgoals: fresh,
            planned: plan[i..].iter().map(|a| ResponseAction::Low(*a)).collect(),
            phase: Phase::ALL.get(i).copied(),
            off_plan: false,
        });
        if out.done {
            break;
        }
    }
    Ok(ExpertEpisode {
        env: EnvKind::Low,
        instruction: task.instruction.clone(),
        instruction_tokens: task.instruction_tokens(),
        seed,
        steps,
        success,
    })
}

/// Expert episodes on the seen split.
pub fn record_raw_trajectories(env: EnvKind, n: usize, seed: u64, cfg: &RecorderConfig) -> Result<Vec<ExpertEpisode>, PriorError> {
    match env {
        EnvKind::High => crate::env_high::task_suite(Split::Seen, n, seed)
            .iter()
            .map(|t| record_expert_high(t, t.seed, cfg))
            .collect(),
        EnvKind::Low => crate::env_low::manip_suite(Split::Seen, n, seed).iter().map(|t| record_expert_low(t, t.seed)).collect(),
    }
}

// ---------------------------------------------------------------------------
// Reasoning annotation.

/// Where the reasoning trace comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Annotator {
    /// Template reasoning from simulator ground truth.
    RuleBased,
    /// Responses produced by an outside model for the prompts of
    /// [`annotation_prompt`], one per step in corpus order. `None` means no
    /// response file was supplied.
    External(Option<Vec<ExternalAnnotation>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalAnnotation {
    #[serde(default)]
    pub visual_state_description: Option<String>,
    pub reasoning_and_reflection: String,
    pub language_plan: String,
}

/// The reasoning-augmentation request for step `t` of an episode.
pub fn annotation_prompt(ep: &ExpertEpisode, t: usize) -> String {
    let words = |a: &ResponseAction| match a {
        ResponseAction::High(h) => h.phrase(),
        ResponseAction::Low(l) => l.to_string(),
    };
    let actions: Vec<&ExpertStep> = ep.steps.iter().filter(|s| !s.off_plan).collect();
    let plan: Vec<String> = actions.iter().enumerate().map(|(i, s)| format!("{}. {}", i + 1, words(&s.action))).collect();
    let next = ep.steps.get(t).map(|s| words(&s.action)).unwrap_or_default();
    format!(
        "For the following task: {}\nYou have generated the following multi-step plan to complete the task: \n{}\nYou have executed the first {} actions of the plan. The next action to be executed is {}. Now you need to follow the multi-step plan to generate the next multi-step plan including \"visual_state_description\", \"reasoning_and_reflection\", and \"language_plan\" in the format of a JSON object. Make sure the step number in the language plan starts from 1.",
        ep.instruction,
        plan.join("\n"),
        t,
        next
    )
}

/// Reflection the rules assign to step `t`: replan at the start or after an
/// exploratory step, error-detected after an invalid action, subgoal-done
/// after progress, otherwise continue.
pub fn rule_reflection(steps: &[ExpertStep], t: usize) -> Reflection {
    let Some(prev) = t.checked_sub(1).map(|i| &steps[i]) else { return Reflection::Replan };
    if !prev.feedback.valid {
        Reflection::ErrorDetected
    } else if prev.off_plan {
        Reflection::Replan
    } else if prev.fresh_subgoals > 0 {
        let done: usize = steps[..t].iter().map(|s| s.fresh_subgoals).sum();
        Reflection::SubgoalDone(done.clamp(1, MAX_SUBGOAL_INDEX as usize) as u8)
    } else {
        Reflection::Continue
    }
}

/// Ground-truth visual entries with colors classified from RGB.
pub fn rule_visual(scene: &TableState) -> Vec<VisualEntry> {
    scene.y_sorted().iter().map(|o| VisualEntry { color: Color::classify(o.rgb), shape: o.shape, coord: o.coord }).collect()
}

/// Most plan actions in a high-level annotation.
pub const HIGH_PLAN_ACTIONS: usize = 4;
/// Most phases in a low-level annotation.
pub const LOW_PLAN_PHASES: usize = 3;

fn rule_plan(step: &ExpertStep) -> Vec<PlanStep> {
    match &step.action {
        ResponseAction::High(_) => {
            let mut plan = Vec::new();
            for a in step.planned.iter().take(HIGH_PLAN_ACTIONS) {
                if let ResponseAction::High(h) = a {
                    plan.push(PlanStep::Skill(h.skill));
                    plan.extend(h.target.clone().map(PlanStep::Name));
                }
            }
            plan
        }
        ResponseAction::Low(_) => {
            let start = step.phase.and_then(|p| Phase::ALL.iter().position(|q| *q == p)).unwrap_or(Phase::ALL.len());
            Phase::ALL[start..].iter().take(LOW_PLAN_PHASES).map(|p| PlanStep::Phase(*p)).collect()
        }
    }
}

/// Minimal-thinking responses of a raw trajectory.
pub fn raw_annotations(ep: &ExpertEpisode) -> Vec<StructuredResponse> {
    ep.steps.iter().map(|s| StructuredResponse::bare(Reflection::Continue, s.action.clone())).collect()
}

/// Full reasoning for every step of each episode. External annotations are
/// consumed in order across episodes; low-level visual descriptions always
/// come from the rule-based generator.
pub fn augment_trajectories(eps: &[ExpertEpisode], annotator: &Annotator) -> Result<Vec<Vec<StructuredResponse>>, PriorError> {
    let mut next_external = 0usize;
    let mut out = Vec::with_capacity(eps.len());
    for ep in eps {
        let mut anns = Vec::with_capacity(ep.steps.len());
        for (t, s) in ep.steps.iter().enumerate() {
            let visual = s.scene.as_ref().map(rule_visual).unwrap_or_default();
            let (reflection, plan) = match annotator {
                Annotator::RuleBased => (rule_reflection(&ep.steps, t), rule_plan(s)),
                Annotator::External(None) => return Err(PriorError::AnnotatorUnavailable),
                Annotator::External(Some(list)) => {
                    let index = next_external;
                    next_external += 1;
                    let a = list.get(index).ok_or(PriorError::Annotation { index, reason: "missing response".into() })?;
                    parse_external(a).map_err(|reason| PriorError::Annotation { index, reason })?
                }
            };
            anns.push(StructuredResponse { visual: visual.clone(), reflection, plan, action: s.action.clone() });
        }
        out.push(anns);
    }
    Ok(out)
}

fn parse_external(a: &ExternalAnnotation) -> Result<(Reflection, Vec<PlanStep>), String> {
    if !a.language_plan.starts_with("1. ") {
        return Err("language plan must start at step 1".into());
    }
    let text = format!("reasoning_and_reflection: {} language_plan: {}", a.reasoning_and_reflection, a.language_plan);
    let (_, r, plan) = parse_thinking(&text).map_err(|e| e.to_string())?;
    Ok((r, plan))
}

// ---------------------------------------------------------------------------
// Sample construction.

const ASK_NEXT: &str = "Based on the above information, please provide the action for the next step to complete the task. Think, then act.";

fn trajectory_prompt(instruction: &str, history: &[HistoryRecord], info: Option<&str>) -> String {
    let hist = serde_json::to_string(history).expect("history serializes");
    let info = info.map(|i| format!("additional_info: {i}\n")).unwrap_or_default();
    format!("instruction: {instruction}\ninteraction_history: {hist}\n{info}{ASK_NEXT}")
}

/// Per-step samples of one annotated episode under a context policy.
/// Exploratory steps only appear as history.
pub fn trajectory_samples(
    kind: PriorKind,
    ep: &ExpertEpisode,
    anns: &[StructuredResponse],
    policy: &ContextPolicy,
    episode_index: usize,
) -> Vec<PriorSample> {
    let catalog = ActionCatalog::minihouse();
    let mut buf = HistoryBuffer::for_policy(policy);
    let mut out = Vec::new();
    for (t, (s, ann)) in ep.steps.iter().zip(anns).enumerate() {
        if !s.off_plan {
            let prompt = build_input(&ep.instruction_tokens, &buf, &s.observation, policy);
            let target = encode_response(ann).expect("annotation encodes");
            let history: Vec<HistoryRecord> =
                buf.last(policy.window()).map(|e| e.to_record(policy.with_thinking(), &catalog)).collect();
            let info = s.scene.as_ref().map(additional_info);
            let mut meta = BTreeMap::new();
            meta.insert("episode".into(), episode_index.to_string());
            meta.insert("step".into(), t.to_string());
            meta.insert("seed".into(), ep.seed.to_string());
            let text = TextPart {
                instruction: Some(ep.instruction.clone()),
                prompt: trajectory_prompt(&ep.instruction, &history, info.as_deref()),
                history: Some(history),
                additional_info: info,
                generation: generation_text(ann, &catalog),
                meta,
            };
            out.push(PriorSample::new(kind, ep.env, prompt, target, text));
        }
        buf.push(HistoryEntry { step_id: t as u32, response: EntryResponse::Parsed(ann.clone()), feedback: s.feedback.clone() });
    }
    out
}

fn qa_sample(kind: PriorKind, env: EnvKind, qa: QaPair, instruction: Option<String>, info: Option<String>, index: usize) -> PriorSample {
    let mut meta = BTreeMap::new();
    meta.insert("index".into(), index.to_string());
    meta.insert("detail".into(), qa.detail.clone());
    let text = TextPart { instruction, additional_info: info, prompt: qa.query_text, generation: qa.answer_text, meta, ..Default::default() };
    PriorSample::new(kind, env, qa.query, qa.answer, text)
}

/// Generation options for [`build_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOptions {
    pub context: ContextPolicy,
    pub recorder: RecorderConfig,
    pub annotator: Annotator,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions { context: ContextPolicy::default(), recorder: RecorderConfig::default(), annotator: Annotator::RuleBased }
    }
}

/// Generates a corpus of `kind` from `n` seen-split episodes (or scenes, for
/// grounding). Trajectory kinds yield one sample per expert step; QA kinds
/// yield one sample per episode or scene.
pub fn build_corpus(kind: PriorKind, env: EnvKind, n: usize, seed: u64, opts: &CorpusOptions) -> Result<Vec<PriorSample>, PriorError> {
    if kind.low_only() && env != EnvKind::Low {
        return Err(PriorError::KindEnvMismatch { kind });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9A1A_0000 ^ kind as u64);
    match kind {
        PriorKind::RawTraj | PriorKind::TrajAug => {
            let eps = record_raw_trajectories(env, n, seed, &opts.recorder)?;
            let anns = if kind == PriorKind::RawTraj {
                eps.iter().map(raw_annotations).collect()
            } else {
                augment_trajectories(&eps, &opts.annotator)?
            };
            Ok(eps.iter().zip(&anns).enumerate().flat_map(|(i, (ep, a))| trajectory_samples(kind, ep, a, &opts.context, i)).collect())
        }
        PriorKind::MaskedAction | PriorKind::Reorder => {
            let eps = record_raw_trajectories(env, n, seed, &RecorderConfig::default())?;
            let mut out = Vec::new();
            for (i, ep) in eps.iter().enumerate() {
                let seq = ep.action_seq();
                let qa = if kind == PriorKind::MaskedAction { gen_masked_action(&seq, &mut rng) } else { gen_reorder(&seq, &mut rng) };
                if let Some(qa) = qa {
                    out.push(qa_sample(kind, env, qa, Some(seq.instruction.clone()), None, i));
                }
            }
            Ok(out)
        }
        PriorKind::AbsGround | PriorKind::RelGround | PriorKind::CombGround => {
            let g = match kind {
                PriorKind::AbsGround => GroundingKind::Abs,
                PriorKind::RelGround => GroundingKind::Rel,
                _ => GroundingKind::Comb,
            };
            let mut out = Vec::new();
            for (i, task) in crate::env_low::manip_suite(Split::Seen, n, seed).iter().enumerate() {
                let scene = scene_for_grounding(task, &mut rng)?;
                if let Some(qa) = gen_grounding(&scene, g, &mut rng) {
                    out.push(qa_sample(kind, env, qa, None, Some(additional_info(&scene)), i));
                }
            }
            Ok(out)
        }
        PriorKind::ExternalStub => Err(PriorError::NotGenerated { kind }),
    }
}

/// A scene from the start of an expert episode or a few waypoints in, so
/// grounding also covers moved objects.
fn scene_for_grounding(task: &ManipTask, rng: &mut ChaCha8Rng) -> Result<TableState, PriorError> {
    let ep = record_expert_low(task, task.seed)?;
    let scenes: Vec<&TableState> = ep.steps.iter().filter_map(|s| s.scene.as_ref()).collect();
    scenes.choose(rng).map(|s| (*s).clone()).ok_or_else(|| PriorError::Expert("empty episode".into()))
}

/// Mixes corpora with a deterministic shuffle.
pub fn mix(corpora: Vec<Vec<PriorSample>>, seed: u64) -> Vec<PriorSample> {
    let mut all: Vec<PriorSample> = corpora.into_iter().flatten().collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x313));
    all
}

// ---------------------------------------------------------------------------
// IO.

pub fn write_jsonl(path: &Path, samples: &[PriorSample]) -> Result<(), PriorError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, &s.record).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PriorSample>, PriorError> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PriorRecord =
            serde_json::from_str(&line).map_err(|e| PriorError::Schema { line: i + 1, reason: e.to_string() })?;
        out.push(PriorSample::from_record(rec, i + 1)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ExternalLine {
    prompt: String,
    response: String,
    #[serde(default)]
    env: Option<EnvKind>,
}

/// Pass-through of outside prompt/response text as `ExternalStub` samples.
pub fn external_from_str(text: &str) -> Result<Vec<PriorSample>, PriorError> {
    let v = vocab();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExternalLine =
            serde_json::from_str(line).map_err(|e| PriorError::Schema { line: i + 1, reason: e.to_string() })?;
        if rec.prompt.trim().is_empty() || rec.response.trim().is_empty() {
            return Err(PriorError::Schema { line: i + 1, reason: "empty prompt or response".into() });
        }
        let prompt = [vec![v.marker(Marker::Ext)], v.tokenize_lossy(&rec.prompt)].concat();
        let target = [v.tokenize_lossy(&rec.response), vec![v.tag(Tag::ActionEnd)]].concat();
        let mut meta = BTreeMap::new();
        meta.insert("line".into(), (i + 1).to_string());
        let text = TextPart { prompt: rec.prompt, generation: rec.response, meta, ..Default::default() };
        out.push(PriorSample::new(PriorKind::ExternalStub, rec.env.unwrap_or(EnvKind::High), prompt, target, text));
    }
    Ok(out)
}

pub fn external_prior_adapter(path: &Path) -> Result<Vec<PriorSample>, PriorError> {
    external_from_str(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Validation.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub index: usize,
    pub kind: PriorKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checked: usize,
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn validate_corpus(records: &[PriorRecord]) -> ValidationReport {
    let failures = records
        .iter()
        .enumerate()
        .filter_map(|(index, r)| validate_record(r).err().map(|reason| ValidationFailure { index, kind: r.kind, reason }))
        .collect();
    ValidationReport { checked: records.len(), failures }
}

/// Kind-specific schema and consistency checks for one record.
pub fn validate_record(r: &PriorRecord) -> Result<(), String> {
    let v = vocab();
    let input = v.parse_surfaces(&r.input_tokens).map_err(|t| format!("unknown input token {t:?}"))?;
    let target = v.parse_surfaces(&r.target_tokens).map_err(|t| format!("unknown target token {t:?}"))?;
    if target.is_empty() {
        return Err("empty target".into());
    }
    match r.kind {
        PriorKind::RawTraj | PriorKind::TrajAug => {
            r.instruction.as_ref().filter(|s| !s.is_empty()).ok_or("missing instruction")?;
            r.interaction_history.as_ref().ok_or("missing interaction_history")?;
            let from_text = parse_generation(&r.generation, r.env).map_err(|e| e.to_string())?;
            let from_tokens = decode_response(&target, r.env).map_err(|e| e.to_string())?;
            if from_text != from_tokens {
                return Err("generation text and target tokens disagree".into());
            }
            if r.env == EnvKind::Low {
                let coords = parse_additional_info(r.additional_info.as_deref().ok_or("missing additional_info")?)
                    .map_err(|e| e.to_string())?;
                if r.kind == PriorKind::TrajAug && from_tokens.visual.iter().map(|e| e.coord).collect::<Vec<_>>() != coords {
                    return Err("visual description does not match additional_info".into());
                }
            }
            if r.kind == PriorKind::RawTraj && (!from_tokens.visual.is_empty() || !from_tokens.plan.is_empty()) {
                return Err("raw trajectory carries reasoning".into());
            }
            if r.kind == PriorKind::TrajAug {
                if from_tokens.plan.is_empty() {
                    return Err("augmented step has no plan".into());
                }
                if !r.generation.contains("language_plan: 1. ") {
                    return Err("plan numbering must start at 1".into());
                }
            }
        }
        PriorKind::MaskedAction => {
            if r.prompt.matches("[MASK]").count() != 1 {
                return Err("prompt must hold exactly one [MASK]".into());
            }
            anchored::reinsert_masked(&input, &target, r.env).ok_or("masked query does not reassemble")?;
        }
        PriorKind::Reorder => {
            let (q, a) = anchored::reorder_actions(&input, &target, r.env).ok_or("reorder actions do not decode")?;
            if q.is_empty() || !anchored::is_permutation(&q, &a) {
                return Err("answer is not a permutation of the query".into());
            }
        }
        PriorKind::AbsGround | PriorKind::RelGround | PriorKind::CombGround => {
            let (&end, body) = target.split_last().ok_or("empty target")?;
            if end != v.tag(Tag::ActionEnd) {
                return Err("grounding answer must end with the action end tag".into());
            }
            let coords = parse_additional_info(r.additional_info.as_deref().ok_or("missing additional_info")?)
                .map_err(|e| e.to_string())?;
            let ints: Option<Vec<u8>> = body.iter().map(|&t| v.as_int(t)).collect();
            let expected = match (ints, body) {
                (Some(c), _) if c.len() == 3 => {
                    if !coords.contains(&[c[0], c[1], c[2]]) {
                        return Err("answer coordinate is not in the scene".into());
                    }
                    format!("[{}, {}, {}]", c[0], c[1], c[2])
                }
                (_, [c, s]) if v.as_color(*c).is_some() && v.as_shape(*s).is_some() => {
                    format!("The {} {}", v.surface(*c), v.surface(*s))
                }
                (_, [y]) if *y == v.query(QueryWord::Yes) && r.kind == PriorKind::CombGround => "Yes".into(),
                (_, [n]) if *n == v.query(QueryWord::No) && r.kind == PriorKind::CombGround => "No".into(),
                _ => return Err("malformed grounding answer".into()),
            };
            if r.generation != expected {
                return Err(format!("generation {:?} does not match target {expected:?}", r.generation));
            }
        }
        PriorKind::ExternalStub => {
            if r.prompt.trim().is_empty() || r.generation.trim().is_empty() {
                return Err("external record needs prompt and generation".into());
            }
        }
    }
    Ok(())
}
