//! State-input construction: instruction, recent history, observation.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_high::ActionCatalog;
use crate::response::{action_text, encode_action, parse_action_text, parse_thinking, think_tokens, thinking_text};
use crate::response::{ResponseAction, StructuredResponse};
use crate::types::{EnvKind, Feedback};
use crate::vocab::{count_tokens, vocab, Marker, Special, TokenId, MAX_INT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    NoHistory,
    SelfSummarization,
    SlidingWindow,
}

/// Serialized as its short name (`none`, `ss3`, `sw5`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContextPolicy {
    pub kind: ContextKind,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextPolicyError {
    #[error("history-bearing context needs k >= 1")]
    ZeroWindow,
    #[error("unknown context policy {0:?} (expected none, ss<k> or sw<k>)")]
    Unknown(String),
}

impl ContextPolicy {
    pub const NONE: ContextPolicy = ContextPolicy { kind: ContextKind::NoHistory, k: 0 };

    pub fn self_summarization(k: usize) -> Self {
        ContextPolicy { kind: ContextKind::SelfSummarization, k }
    }

    pub fn sliding_window(k: usize) -> Self {
        ContextPolicy { kind: ContextKind::SlidingWindow, k }
    }

    pub fn validate(&self) -> Result<(), ContextPolicyError> {
        if self.kind != ContextKind::NoHistory && self.k == 0 {
            return Err(ContextPolicyError::ZeroWindow);
        }
        Ok(())
    }

    /// Entries visible to the policy.
    pub fn window(&self) -> usize {
        match self.kind {
            ContextKind::NoHistory => 0,
            _ => self.k,
        }
    }

    pub fn with_thinking(&self) -> bool {
        self.kind == ContextKind::SelfSummarization
    }
}

impl Default for ContextPolicy {
    fn default() -> Self {
        ContextPolicy::self_summarization(1)
    }
}

impl fmt::Display for ContextPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ContextKind::NoHistory => write!(f, "none"),
            ContextKind::SelfSummarization => write!(f, "ss{}", self.k),
            ContextKind::SlidingWindow => write!(f, "sw{}", self.k),
        }
    }
}

impl FromStr for ContextPolicy {
    type Err = ContextPolicyError;

    /// `none`, `ss3`, `sw5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ContextPolicyError::Unknown(s.to_string());
        if s == "none" {
            return Ok(ContextPolicy::NONE);
        }
        let (kind, k) = if let Some(k) = s.strip_prefix("ss") {
            (ContextKind::SelfSummarization, k)
        } else if let Some(k) = s.strip_prefix("sw") {
            (ContextKind::SlidingWindow, k)
        } else {
            return Err(unknown());
        };
        let p = ContextPolicy { kind, k: k.parse().map_err(|_| unknown())? };
        p.validate()?;
        Ok(p)
    }
}

impl From<ContextPolicy> for String {
    fn from(p: ContextPolicy) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ContextPolicy {
    type Error = ContextPolicyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// What the agent emitted at a past step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryResponse {
    Parsed(StructuredResponse),
    /// Unparsable output, kept verbatim.
    Raw(Vec<TokenId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step_id: u32,
    pub response: EntryResponse,
    pub feedback: Feedback,
}

/// JSON form used inside `interaction_history`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking: Option<String>,
    pub action: String,
    pub env_feedback: String,
}

impl HistoryEntry {
    pub fn tokens(&self, with_thinking: bool) -> Vec<TokenId> {
        let v = vocab();
        let step = v.int(self.step_id.min(MAX_INT as u32) as u8).expect("int token");
        let mut out = vec![v.marker(Marker::Hist), step];
        match &self.response {
            EntryResponse::Parsed(r) => {
                if with_thinking {
                    out.push(v.marker(Marker::Thinking));
                    out.extend(think_tokens(r).unwrap_or_default());
                }
                out.push(v.marker(Marker::Act));
                out.extend(encode_action(&r.action).unwrap_or_else(|_| vec![v.special(Special::Unk)]));
            }
            EntryResponse::Raw(_) => {
                out.push(v.marker(Marker::Act));
                out.push(v.special(Special::Unk));
            }
        }
        out.push(v.marker(Marker::Fb));
        out.push(v.feedback(self.feedback.code));
        out
    }

    pub fn to_record(&self, with_thinking: bool, catalog: &ActionCatalog) -> HistoryRecord {
        let (thinking, action) = match &self.response {
            EntryResponse::Parsed(r) => (with_thinking.then(|| thinking_text(r)), action_text(&r.action, catalog)),
            EntryResponse::Raw(t) => (None, vocab().render(t)),
        };
        HistoryRecord { step_id: self.step_id, thinking, action, env_feedback: self.feedback.text.clone() }
    }

    /// Inverse of [`HistoryEntry::to_record`]. Records without thinking come
    /// back with an empty think block carrying the `continue` reflection.
    pub fn from_record(rec: &HistoryRecord, mode: EnvKind) -> Self {
        let response = match parse_action_text(&rec.action, mode) {
            Ok(action) => match rec.thinking.as_deref().map(parse_thinking) {
                Some(Ok((visual, reflection, plan))) => {
                    EntryResponse::Parsed(StructuredResponse { visual, reflection, plan, action })
                }
                Some(Err(_)) => EntryResponse::Raw(vocab().tokenize_lossy(&rec.action)),
                None => EntryResponse::Parsed(StructuredResponse::bare(crate::response::Reflection::Continue, action)),
            },
            Err(_) => EntryResponse::Raw(vocab().tokenize_lossy(&rec.action)),
        };
        HistoryEntry { step_id: rec.step_id, response, feedback: Feedback::from_text(&rec.env_feedback) }
    }

    pub fn action(&self) -> Option<&ResponseAction> {
        match &self.response {
            EntryResponse::Parsed(r) => Some(&r.action),
            EntryResponse::Raw(_) => None,
        }
    }
}

/// FIFO history holding at most `capacity` entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<HistoryEntry>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        HistoryBuffer { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn for_policy(p: &ContextPolicy) -> Self {
        HistoryBuffer::new(p.window())
    }

    pub fn push(&mut self, e: HistoryEntry) {
        if self.capacity == 0 {
            return;
        }
        while self.entries.len() >= self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &HistoryEntry> + ExactSizeIterator {
        self.entries.iter()
    }

    /// Last `k` entries, oldest first.
    pub fn last(&self, k: usize) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter().skip(self.entries.len().saturating_sub(k))
    }
}

/// `instruction ‖ last-k entries ‖ observation`.
pub fn build_input(
    instruction: &[TokenId],
    buffer: &HistoryBuffer,
    observation: &[TokenId],
    policy: &ContextPolicy,
) -> Vec<TokenId> {
    let mut out = instruction.to_vec();
    for e in buffer.last(policy.window()) {
        out.extend(e.tokens(policy.with_thinking()));
    }
    out.extend_from_slice(observation);
    out
}

/// Everything needed to rebuild every turn's input under any policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub instruction: Vec<TokenId>,
    /// Observation before each turn.
    pub observations: Vec<Vec<TokenId>>,
    /// Entry produced by each turn.
    pub entries: Vec<HistoryEntry>,
}

impl EpisodeLog {
    pub fn inputs(&self, policy: &ContextPolicy) -> Vec<Vec<TokenId>> {
        let mut buf = HistoryBuffer::for_policy(policy);
        let mut out = Vec::with_capacity(self.observations.len());
        for (t, obs) in self.observations.iter().enumerate() {
            out.push(build_input(&self.instruction, &buf, obs, policy));
            if let Some(e) = self.entries.get(t) {
                buf.push(e.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenStats {
    pub mean_input_tokens: f64,
    pub max_input_tokens: usize,
    pub turns: usize,
}

impl TokenStats {
    pub fn from_inputs<'a>(inputs: impl IntoIterator<Item = &'a [TokenId]>) -> Self {
        let (mut sum, mut max, mut n) = (0usize, 0usize, 0usize);
        for x in inputs {
            let c = count_tokens(x);
            sum += c;
            max = max.max(c);
            n += 1;
        }
        let mean = if n == 0 { 0.0 } else { sum as f64 / n as f64 };
        TokenStats { mean_input_tokens: mean, max_input_tokens: max, turns: n }
    }
}

/// Input-size statistics over a set of episodes replayed under `policy`.
pub fn context_token_stats(logs: &[EpisodeLog], policy: &ContextPolicy) -> TokenStats {
    let inputs: Vec<Vec<TokenId>> = logs.iter().flat_map(|l| l.inputs(policy)).collect();
    TokenStats::from_inputs(inputs.iter().map(|x| x.as_slice()))
}
