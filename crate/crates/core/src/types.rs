//! Domain types shared by the environments, the reward engine and the trainer.

use serde::{Deserialize, Serialize};

use crate::response::{ParseFailure, StructuredResponse};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    High,
    Low,
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvKind::High => "high",
            EnvKind::Low => "low",
        })
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" | "minihouse" => Ok(EnvKind::High),
            "low" | "minitable" => Ok(EnvKind::Low),
            other => Err(format!("unknown env kind {other:?} (expected high|low)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Seen,
    Unseen,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        })
    }
}

/// Why an action did (not) execute. Each code is also a vocabulary token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackCode {
    Ok,
    Holding,
    NotHolding,
    NotNear,
    AlreadyOpen,
    AlreadyClosed,
    NotOpenable,
    ReceptacleClosed,
    AlreadyOn,
    AlreadyOff,
    NotToggleable,
    NotPickable,
    NotSliceable,
    UnknownTarget,
    InsideClosed,
    ParseError,
    OutOfRange,
}

impl FeedbackCode {
    pub const ALL: [FeedbackCode; 17] = [
        FeedbackCode::Ok,
        FeedbackCode::Holding,
        FeedbackCode::NotHolding,
        FeedbackCode::NotNear,
        FeedbackCode::AlreadyOpen,
        FeedbackCode::AlreadyClosed,
        FeedbackCode::NotOpenable,
        FeedbackCode::ReceptacleClosed,
        FeedbackCode::AlreadyOn,
        FeedbackCode::AlreadyOff,
        FeedbackCode::NotToggleable,
        FeedbackCode::NotPickable,
        FeedbackCode::NotSliceable,
        FeedbackCode::UnknownTarget,
        FeedbackCode::InsideClosed,
        FeedbackCode::ParseError,
        FeedbackCode::OutOfRange,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            FeedbackCode::Ok => "fb:ok",
            FeedbackCode::Holding => "fb:holding",
            FeedbackCode::NotHolding => "fb:not_holding",
            FeedbackCode::NotNear => "fb:not_near",
            FeedbackCode::AlreadyOpen => "fb:already_open",
            FeedbackCode::AlreadyClosed => "fb:already_closed",
            FeedbackCode::NotOpenable => "fb:not_openable",
            FeedbackCode::ReceptacleClosed => "fb:receptacle_closed",
            FeedbackCode::AlreadyOn => "fb:already_on",
            FeedbackCode::AlreadyOff => "fb:already_off",
            FeedbackCode::NotToggleable => "fb:not_toggleable",
            FeedbackCode::NotPickable => "fb:not_pickable",
            FeedbackCode::NotSliceable => "fb:not_sliceable",
            FeedbackCode::UnknownTarget => "fb:unknown_target",
            FeedbackCode::InsideClosed => "fb:inside_closed",
            FeedbackCode::ParseError => "fb:parse_error",
            FeedbackCode::OutOfRange => "fb:out_of_range",
        }
    }
}

pub const HIGH_SUCCESS_TEXT: &str = "Last action executed successfully.";
pub const LOW_SUCCESS_TEXT: &str = "Last action was successful.";

/// Environment feedback for one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Feedback {
    pub text: String,
    pub valid: bool,
    pub code: FeedbackCode,
}

impl Feedback {
    pub fn ok(env: EnvKind) -> Self {
        let text = match env {
            EnvKind::High => HIGH_SUCCESS_TEXT,
            EnvKind::Low => LOW_SUCCESS_TEXT,
        };
        Feedback { text: text.to_string(), valid: true, code: FeedbackCode::Ok }
    }

    pub fn invalid(code: FeedbackCode, reason: impl AsRef<str>) -> Self {
        Feedback { text: format!("Last action is invalid. {}", reason.as_ref()), valid: false, code }
    }

    pub fn parse_error() -> Self {
        Feedback::invalid(FeedbackCode::ParseError, "The action could not be parsed")
    }

    /// Recovers the code from a feedback string produced by either environment.
    pub fn from_text(text: &str) -> Self {
        if text == HIGH_SUCCESS_TEXT || text == LOW_SUCCESS_TEXT {
            return Feedback { text: text.to_string(), valid: true, code: FeedbackCode::Ok };
        }
        const PATTERNS: &[(&str, FeedbackCode)] = &[
            ("currently holding", FeedbackCode::Holding),
            ("not holding", FeedbackCode::NotHolding),
            ("not close to", FeedbackCode::NotNear),
            ("already open", FeedbackCode::AlreadyOpen),
            ("already closed", FeedbackCode::AlreadyClosed),
            ("already on", FeedbackCode::AlreadyOn),
            ("already off", FeedbackCode::AlreadyOff),
            ("cannot be opened", FeedbackCode::NotOpenable),
            ("inside the closed", FeedbackCode::InsideClosed),
            ("cannot be turned", FeedbackCode::NotToggleable),
            ("cannot be picked", FeedbackCode::NotPickable),
            ("cannot be sliced", FeedbackCode::NotSliceable),
            ("There is no", FeedbackCode::UnknownTarget),
            ("has no target", FeedbackCode::UnknownTarget),
            ("could not be parsed", FeedbackCode::ParseError),
            ("allowed range", FeedbackCode::OutOfRange),
            ("is closed", FeedbackCode::ReceptacleClosed),
        ];
        let code = PATTERNS.iter().find(|(p, _)| text.contains(p)).map(|(_, c)| *c).unwrap_or(FeedbackCode::ParseError);
        Feedback { text: text.to_string(), valid: false, code }
    }
}

/// Per-turn reward components and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub success: f64,
    pub subgoal: f64,
    pub behavior: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(success: f64, subgoal: f64, behavior: f64) -> Self {
        RewardBreakdown { success, subgoal, behavior, total: success + subgoal + behavior }
    }

    pub fn is_consistent(&self) -> bool {
        self.total == self.success + self.subgoal + self.behavior
    }
}

/// One agent-environment interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub state_input: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub parsed: Result<StructuredResponse, ParseFailure>,
    pub feedback: Feedback,
    pub reward: RewardBreakdown,
    /// Visual matching ratio for low-level turns.
    pub q: Option<f64>,
    pub turn_value: f64,
    pub token_values: Vec<f64>,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Success,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<Turn>,
    pub terminal: Terminal,
    pub episode_return: f64,
    /// Number of subgoals the task defines (high) or target objects (low).
    pub num_subgoals: usize,
    pub subgoals_reached: usize,
}

impl Trajectory {
    pub fn new(turns: Vec<Turn>, terminal: Terminal, num_subgoals: usize, subgoals_reached: usize) -> Self {
        let episode_return = turns.iter().map(|t| t.reward.total).sum();
        Trajectory { turns, terminal, episode_return, num_subgoals, subgoals_reached }
    }

    pub fn success(&self) -> bool {
        self.terminal == Terminal::Success
    }

    pub fn invalid_turns(&self) -> usize {
        self.turns.iter().filter(|t| !t.feedback.valid).count()
    }
}
