//! Structured reasoning + action responses and their token/text codecs.
//!
//! Token grammar of a response:
//!
//! ```text
//! <|think_start|> (color shape x y z)* reflection plan-symbol* <|think_end|>
//! <|action_start|> action <|action_end|>
//! ```
//!
//! where a high-level action is `skill [name]` and a low-level action is seven
//! integer tokens. Decoding never panics; malformed input yields a
//! [`ParseFailure`] that the reward engine charges as an invalid action.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_high::{ActionCatalog, HighLevelAction, Skill};
use crate::env_low::palette::{Color, Shape};
use crate::env_low::LowLevelAction;
use crate::types::EnvKind;
use crate::vocab::{vocab, Phase, Tag, TokenClass, TokenId, MAX_COORD, MAX_SUBGOAL_INDEX};

/// Default cap on generated response length.
pub const MAX_RESPONSE_TOKENS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reflection {
    Continue,
    Replan,
    ErrorDetected,
    SubgoalDone(u8),
}

impl Reflection {
    pub fn alphabet() -> Vec<Reflection> {
        let mut v = vec![Reflection::Continue, Reflection::Replan, Reflection::ErrorDetected];
        v.extend((1..=MAX_SUBGOAL_INDEX).map(Reflection::SubgoalDone));
        v
    }

    pub fn surface(self) -> String {
        match self {
            Reflection::Continue => "continue".into(),
            Reflection::Replan => "replan".into(),
            Reflection::ErrorDetected => "error-detected".into(),
            Reflection::SubgoalDone(k) => format!("subgoal-done:{k}"),
        }
    }

    pub fn from_surface(s: &str) -> Option<Self> {
        match s {
            "continue" => Some(Reflection::Continue),
            "replan" => Some(Reflection::Replan),
            "error-detected" => Some(Reflection::ErrorDetected),
            _ => {
                let k: u8 = s.strip_prefix("subgoal-done:")?.parse().ok()?;
                (1..=MAX_SUBGOAL_INDEX).contains(&k).then_some(Reflection::SubgoalDone(k))
            }
        }
    }

    pub fn sentence(self) -> String {
        match self {
            Reflection::Continue => "Based on the interaction history and current observation, I am in the middle of the last plan and will continue carrying it out.".into(),
            Reflection::Replan => "Based on the current observation, I should formulate a new plan.".into(),
            Reflection::ErrorDetected => "The last action was invalid, so I need to reflect on the feedback and adjust my plan.".into(),
            Reflection::SubgoalDone(k) => format!("I have completed subgoal {k} of the task and will continue with the plan."),
        }
    }

    fn from_sentence(s: &str) -> Option<Self> {
        Reflection::alphabet().into_iter().find(|r| r.sentence() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStep {
    Skill(Skill),
    Phase(Phase),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisualEntry {
    pub color: Color,
    pub shape: Shape,
    pub coord: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseAction {
    High(HighLevelAction),
    Low(LowLevelAction),
}

impl ResponseAction {
    pub fn env(&self) -> EnvKind {
        match self {
            ResponseAction::High(_) => EnvKind::High,
            ResponseAction::Low(_) => EnvKind::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub visual: Vec<VisualEntry>,
    pub reflection: Reflection,
    pub plan: Vec<PlanStep>,
    pub action: ResponseAction,
}

impl StructuredResponse {
    /// Empty think block contents apart from the reflection.
    pub fn bare(reflection: Reflection, action: ResponseAction) -> Self {
        StructuredResponse { visual: Vec::new(), reflection, plan: Vec::new(), action }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("symbol {0:?} is outside the closed vocabulary")]
    UnknownSymbol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailure {
    #[error("empty response")]
    Empty,
    #[error("response does not open with the think tag")]
    MissingThinkStart,
    #[error("think block is not closed")]
    UnclosedThink,
    #[error("malformed visual description entry")]
    BadVisualEntry,
    #[error("think block has no reflection symbol")]
    MissingReflection,
    #[error("plan contains a non-plan symbol")]
    BadPlanSymbol,
    #[error("no action block after the think block")]
    MissingActionStart,
    #[error("action block is not closed")]
    UnclosedAction,
    #[error("action has the wrong number of components")]
    BadArity,
    #[error("action contains an invalid token")]
    BadActionToken,
    #[error("more than one think or action block")]
    DuplicateBlock,
    #[error("tokens after the action block")]
    TrailingTokens,
}

pub fn encode_response(resp: &StructuredResponse) -> Result<Vec<TokenId>, CodecError> {
    let v = vocab();
    let mut out = vec![v.tag(Tag::ThinkStart)];
    for e in &resp.visual {
        out.push(v.color(e.color));
        out.push(v.shape(e.shape));
        for &c in &e.coord {
            if c > MAX_COORD {
                return Err(CodecError::UnknownSymbol(c.to_string()));
            }
            out.push(v.int(c).expect("coordinate token"));
        }
    }
    out.push(v.reflection(resp.reflection).ok_or_else(|| CodecError::UnknownSymbol(resp.reflection.surface()))?);
    for step in &resp.plan {
        out.push(match step {
            PlanStep::Skill(s) => v.skill(*s),
            PlanStep::Phase(p) => v.phase(*p),
            PlanStep::Name(n) => v.name(n).ok_or_else(|| CodecError::UnknownSymbol(n.clone()))?,
        });
    }
    out.push(v.tag(Tag::ThinkEnd));
    out.push(v.tag(Tag::ActionStart));
    out.extend(encode_action(&resp.action)?);
    out.push(v.tag(Tag::ActionEnd));
    Ok(out)
}

pub fn encode_action(action: &ResponseAction) -> Result<Vec<TokenId>, CodecError> {
    let v = vocab();
    match action {
        ResponseAction::High(a) => {
            let mut out = vec![v.skill(a.skill)];
            if let Some(t) = &a.target {
                out.push(v.name(t).ok_or_else(|| CodecError::UnknownSymbol(t.clone()))?);
            }
            Ok(out)
        }
        ResponseAction::Low(a) => a
            .0
            .iter()
            .map(|&c| v.int(c).ok_or_else(|| CodecError::UnknownSymbol(c.to_string())))
            .collect(),
    }
}

/// Parses a token sequence in the given environment's action mode.
pub fn decode_response(tokens: &[TokenId], mode: EnvKind) -> Result<StructuredResponse, ParseFailure> {
    let v = vocab();
    let is_tag = |t: TokenId| v.get(t).map(|x| x.class == TokenClass::Tag).unwrap_or(false);
    let think_start = v.tag(Tag::ThinkStart);
    let think_end = v.tag(Tag::ThinkEnd);
    let action_start = v.tag(Tag::ActionStart);
    let action_end = v.tag(Tag::ActionEnd);

    if tokens.is_empty() {
        return Err(ParseFailure::Empty);
    }
    if tokens[0] != think_start {
        return Err(ParseFailure::MissingThinkStart);
    }
    let mut i = 1;
    let at = |i: usize| tokens.get(i).copied();

    let mut visual = Vec::new();
    while let Some(color) = at(i).and_then(|t| v.as_color(t)) {
        let shape = at(i + 1).and_then(|t| v.as_shape(t)).ok_or(ParseFailure::BadVisualEntry)?;
        let mut coord = [0u8; 3];
        for (k, c) in coord.iter_mut().enumerate() {
            let n = at(i + 2 + k).and_then(|t| v.as_int(t)).ok_or(ParseFailure::BadVisualEntry)?;
            if n > MAX_COORD {
                return Err(ParseFailure::BadVisualEntry);
            }
            *c = n;
        }
        visual.push(VisualEntry { color, shape, coord });
        i += 5;
    }

    let reflection = match at(i) {
        None => return Err(ParseFailure::UnclosedThink),
        Some(t) => v.as_reflection(t).ok_or(ParseFailure::MissingReflection)?,
    };
    i += 1;

    let mut plan = Vec::new();
    loop {
        let Some(t) = at(i) else { return Err(ParseFailure::UnclosedThink) };
        if t == think_end {
            i += 1;
            break;
        }
        if is_tag(t) {
            return Err(ParseFailure::UnclosedThink);
        }
        let step = if let Some(s) = v.as_skill(t) {
            PlanStep::Skill(s)
        } else if let Some(p) = v.as_phase(t) {
            PlanStep::Phase(p)
        } else if let Some(n) = v.as_name(t) {
            PlanStep::Name(n.to_string())
        } else {
            return Err(ParseFailure::BadPlanSymbol);
        };
        plan.push(step);
        i += 1;
    }

    match at(i) {
        Some(t) if t == action_start => i += 1,
        Some(t) if t == think_start => return Err(ParseFailure::DuplicateBlock),
        _ => return Err(ParseFailure::MissingActionStart),
    }
    let body_start = i;
    loop {
        match at(i) {
            None => return Err(ParseFailure::UnclosedAction),
            Some(t) if t == action_end => break,
            Some(t) if is_tag(t) => return Err(ParseFailure::UnclosedAction),
            Some(_) => i += 1,
        }
    }
    let body = &tokens[body_start..i];
    i += 1;
    if i < tokens.len() {
        return Err(if tokens[i..].iter().any(|&t| t == think_start || t == action_start) {
            ParseFailure::DuplicateBlock
        } else {
            ParseFailure::TrailingTokens
        });
    }

    let action = match mode {
        EnvKind::High => ResponseAction::High(decode_high_action(body)?),
        EnvKind::Low => ResponseAction::Low(decode_low_action(body)?),
    };
    Ok(StructuredResponse { visual, reflection, plan, action })
}

/// Decodes a bare action body (no tags) in the given mode.
pub fn decode_action(body: &[TokenId], mode: EnvKind) -> Result<ResponseAction, ParseFailure> {
    Ok(match mode {
        EnvKind::High => ResponseAction::High(decode_high_action(body)?),
        EnvKind::Low => ResponseAction::Low(decode_low_action(body)?),
    })
}

fn decode_high_action(body: &[TokenId]) -> Result<HighLevelAction, ParseFailure> {
    let v = vocab();
    let (&first, rest) = body.split_first().ok_or(ParseFailure::BadArity)?;
    let skill = v.as_skill(first).ok_or(ParseFailure::BadActionToken)?;
    let arity = if skill.takes_target() { 1 } else { 0 };
    if rest.len() != arity {
        return Err(ParseFailure::BadArity);
    }
    let target = match rest.first() {
        Some(&t) => Some(v.as_name(t).ok_or(ParseFailure::BadActionToken)?.to_string()),
        None => None,
    };
    Ok(HighLevelAction { skill, target })
}

fn decode_low_action(body: &[TokenId]) -> Result<LowLevelAction, ParseFailure> {
    let v = vocab();
    if body.len() != 7 {
        return Err(ParseFailure::BadArity);
    }
    let mut out = [0u8; 7];
    for (slot, &t) in out.iter_mut().zip(body) {
        *slot = v.as_int(t).ok_or(ParseFailure::BadActionToken)?;
    }
    Ok(LowLevelAction(out))
}

// ---------------------------------------------------------------------------
// Text wire format used by the JSONL corpora.

/// `a red star at [35, 15, 17]` / `an orange star at [...]`.
pub fn article_phrase(label: &str, coord: [u8; 3]) -> String {
    let article = if label.starts_with(['a', 'e', 'i', 'o', 'u', 'A', 'E', 'I', 'O', 'U']) { "an" } else { "a" };
    format!("{article} {label} at [{}, {}, {}]", coord[0], coord[1], coord[2])
}

/// Joins phrases with commas and a final `and`, prefixed with the left-to-right lead-in.
pub fn visual_sentence(phrases: &[String]) -> String {
    let body = match phrases.len() {
        0 => String::new(),
        1 => phrases[0].clone(),
        2 => format!("{} and {}", phrases[0], phrases[1]),
        n => format!("{}, and {}", phrases[..n - 1].join(", "), phrases[n - 1]),
    };
    format!("From left to right, I can see {body}.")
}

pub fn describe_visual(entries: &[VisualEntry]) -> String {
    let phrases: Vec<String> =
        entries.iter().map(|e| article_phrase(&format!("{} {}", e.color, e.shape), e.coord)).collect();
    visual_sentence(&phrases)
}

fn phase_phrase(p: Phase) -> &'static str {
    match p {
        Phase::Hover => "Move gripper above the target object",
        Phase::Grasp => "Lower gripper and close it to grasp the object",
        Phase::Lift => "Lift the object up",
        Phase::Move => "Move the object above the container",
        Phase::Release => "Open gripper to release the object",
    }
}

/// Groups plan symbols into human-readable steps.
pub fn plan_lines(plan: &[PlanStep]) -> Vec<String> {
    let mut lines = Vec::new();
    let mut i = 0;
    while i < plan.len() {
        match &plan[i] {
            PlanStep::Skill(s) => {
                if s.takes_target() {
                    if let Some(PlanStep::Name(n)) = plan.get(i + 1) {
                        lines.push(HighLevelAction { skill: *s, target: Some(n.clone()) }.phrase());
                        i += 2;
                        continue;
                    }
                    lines.push(format!("{} something", s.verb()));
                } else {
                    lines.push(HighLevelAction { skill: *s, target: None }.phrase());
                }
            }
            PlanStep::Phase(p) => lines.push(phase_phrase(*p).to_string()),
            PlanStep::Name(n) => lines.push(format!("attend to the {n}")),
        }
        i += 1;
    }
    lines
}

fn parse_plan_line(line: &str) -> Option<Vec<PlanStep>> {
    if let Some(p) = Phase::ALL.into_iter().find(|p| phase_phrase(*p) == line) {
        return Some(vec![PlanStep::Phase(p)]);
    }
    if let Some(n) = line.strip_prefix("attend to the ") {
        return Some(vec![PlanStep::Name(n.to_string())]);
    }
    if let Some(verb) = line.strip_suffix(" something") {
        if let Some(s) = Skill::ALL.into_iter().find(|s| s.verb() == verb) {
            return Some(vec![PlanStep::Skill(s)]);
        }
    }
    if let Some(a) = HighLevelAction::parse_phrase(line) {
        let mut out = vec![PlanStep::Skill(a.skill)];
        out.extend(a.target.map(PlanStep::Name));
        return Some(out);
    }
    None
}

/// Free-text thinking for a response, in the `visual_description: ...
/// reasoning_and_reflection: ... language_plan: ...` layout.
pub fn thinking_text(resp: &StructuredResponse) -> String {
    if resp.visual.is_empty() && resp.plan.is_empty() {
        return resp.reflection.sentence();
    }
    let mut parts = Vec::new();
    if !resp.visual.is_empty() {
        parts.push(format!("visual_description: {}", describe_visual(&resp.visual)));
    }
    parts.push(format!("reasoning_and_reflection: {}", resp.reflection.sentence()));
    if !resp.plan.is_empty() {
        let lines: Vec<String> =
            plan_lines(&resp.plan).iter().enumerate().map(|(i, l)| format!("{}. {l}", i + 1)).collect();
        parts.push(format!("language_plan: {}", lines.join("\n")));
    }
    parts.join(" ")
}

/// `[31, 'find a Plate']` for high-level, `[57, 74, 27, 0, 60, 90, 1]` for low-level.
pub fn action_text(action: &ResponseAction, catalog: &ActionCatalog) -> String {
    match action {
        ResponseAction::High(a) => {
            let id = catalog.id_of(a).map(|i| i as i64).unwrap_or(-1);
            format!("[{id}, '{}']", a.phrase())
        }
        ResponseAction::Low(a) => a.to_string(),
    }
}

/// Full generation string with the four tags.
pub fn generation_text(resp: &StructuredResponse, catalog: &ActionCatalog) -> String {
    format!(
        "{}{}{}{}{}{}",
        Tag::ThinkStart.surface(),
        thinking_text(resp),
        Tag::ThinkEnd.surface(),
        Tag::ActionStart.surface(),
        action_text(&resp.action, catalog),
        Tag::ActionEnd.surface()
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse generation text: {0}")]
pub struct TextParseError(pub String);

fn parse_visual_sentence(s: &str) -> Result<Vec<VisualEntry>, TextParseError> {
    let err = || TextParseError(format!("visual description {s:?}"));
    let body = s.strip_prefix("From left to right, I can see ").and_then(|b| b.strip_suffix('.')).ok_or_else(err)?;
    let mut out = Vec::new();
    for chunk in body.split("], ").map(|c| c.trim_start_matches("and ")) {
        let chunk = chunk.trim_end_matches(']');
        let (head, coords) = chunk.split_once(" at [").ok_or_else(err)?;
        let head = head.strip_prefix("a ").or_else(|| head.strip_prefix("an ")).ok_or_else(err)?;
        let (color, shape) = head.split_once(' ').ok_or_else(err)?;
        let nums: Vec<u8> = coords.split(", ").map(|n| n.trim().parse().map_err(|_| err())).collect::<Result<_, _>>()?;
        if nums.len() != 3 {
            return Err(err());
        }
        out.push(VisualEntry {
            color: Color::parse(color).ok_or_else(err)?,
            shape: Shape::parse(shape).ok_or_else(err)?,
            coord: [nums[0], nums[1], nums[2]],
        });
    }
    // A two-item sentence joins with " and " and no comma.
    if out.is_empty() {
        return Err(err());
    }
    Ok(out)
}

fn parse_visual_any(s: &str) -> Result<Vec<VisualEntry>, TextParseError> {
    if let Ok(v) = parse_visual_sentence(s) {
        return Ok(v);
    }
    // Two entries: "a X at [..] and a Y at [..]."
    let body = s
        .strip_prefix("From left to right, I can see ")
        .and_then(|b| b.strip_suffix('.'))
        .ok_or_else(|| TextParseError(s.to_string()))?;
    let (a, b) = body.split_once("] and ").ok_or_else(|| TextParseError(s.to_string()))?;
    let mut out = parse_visual_sentence(&format!("From left to right, I can see {a}]."))?;
    out.extend(parse_visual_sentence(&format!("From left to right, I can see {b}."))?);
    Ok(out)
}

/// Inverse of [`thinking_text`]: (visual, reflection, plan).
pub fn parse_thinking(thinking: &str) -> Result<(Vec<VisualEntry>, Reflection, Vec<PlanStep>), TextParseError> {
    let err = |m: &str| TextParseError(m.to_string());
    if let Some(r) = Reflection::from_sentence(thinking) {
        return Ok((Vec::new(), r, Vec::new()));
    }
    let (mut visual, mut plan) = (Vec::new(), Vec::new());
    let mut body = thinking;
    if let Some(v) = body.strip_prefix("visual_description: ") {
        let (desc, after) = v.split_once(" reasoning_and_reflection: ").ok_or_else(|| err("no reflection"))?;
        visual = parse_visual_any(desc)?;
        body = after;
    } else {
        body = body.strip_prefix("reasoning_and_reflection: ").ok_or_else(|| err("no reflection"))?;
    }
    let (refl, plan_text) = match body.split_once(" language_plan: ") {
        Some((r, p)) => (r, Some(p)),
        None => (body, None),
    };
    if let Some(p) = plan_text {
        for line in p.split('\n') {
            let (_, step) = line.split_once(". ").ok_or_else(|| err("plan numbering"))?;
            plan.extend(parse_plan_line(step).ok_or_else(|| err("plan step"))?);
        }
    }
    let reflection = Reflection::from_sentence(refl).ok_or_else(|| err("unknown reflection sentence"))?;
    Ok((visual, reflection, plan))
}

/// Inverse of [`action_text`].
pub fn parse_action_text(text: &str, mode: EnvKind) -> Result<ResponseAction, TextParseError> {
    let err = |m: &str| TextParseError(m.to_string());
    let inner = text.trim().strip_prefix('[').and_then(|s| s.strip_suffix(']')).ok_or_else(|| err("action brackets"))?;
    Ok(match mode {
        EnvKind::High => {
            let (_, phrase) = inner.split_once(", ").ok_or_else(|| err("high action"))?;
            let phrase = phrase.trim_matches('\'');
            ResponseAction::High(HighLevelAction::parse_phrase(phrase).ok_or_else(|| err("action phrase"))?)
        }
        EnvKind::Low => {
            let nums: Vec<u8> =
                inner.split(',').map(|n| n.trim().parse().map_err(|_| err("low action"))).collect::<Result<_, _>>()?;
            let arr: [u8; 7] = nums.try_into().map_err(|_| err("low action arity"))?;
            ResponseAction::Low(LowLevelAction(arr))
        }
    })
}

/// Inverse of [`generation_text`].
pub fn parse_generation(text: &str, mode: EnvKind) -> Result<StructuredResponse, TextParseError> {
    let err = |m: &str| TextParseError(m.to_string());
    let rest = text.strip_prefix(Tag::ThinkStart.surface()).ok_or_else(|| err("missing think tag"))?;
    let (thinking, rest) = rest.split_once(Tag::ThinkEnd.surface()).ok_or_else(|| err("unclosed think"))?;
    let rest = rest.strip_prefix(Tag::ActionStart.surface()).ok_or_else(|| err("missing action tag"))?;
    let action_str = rest.strip_suffix(Tag::ActionEnd.surface()).ok_or_else(|| err("unclosed action"))?;
    let (visual, reflection, plan) = parse_thinking(thinking)?;
    let action = parse_action_text(action_str, mode)?;
    Ok(StructuredResponse { visual, reflection, plan, action })
}

/// Tokens strictly inside the think block of a well-formed response.
pub fn think_tokens(resp: &StructuredResponse) -> Result<Vec<TokenId>, CodecError> {
    let full = encode_response(resp)?;
    let n_action = encode_action(&resp.action)?.len();
    Ok(full[1..full.len() - n_action - 3].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::count_tokens;
    use proptest::prelude::*;

    fn plate_response() -> StructuredResponse {
        StructuredResponse::bare(Reflection::Continue, ResponseAction::High(HighLevelAction::find("Plate")))
    }

    #[test]
    fn high_level_example_encodes_to_tagged_sequence() {
        let v = vocab();
        let toks = encode_response(&plate_response()).unwrap();
        assert_eq!(toks.first(), Some(&v.tag(Tag::ThinkStart)));
        assert_eq!(toks.last(), Some(&v.tag(Tag::ActionEnd)));
        assert_eq!(
            v.render(&toks),
            "<|think_start|> continue <|think_end|> <|action_start|> find Plate <|action_end|>"
        );
        // Four tags, one reflection, skill and target.
        assert_eq!(count_tokens(&toks), 7);
    }

    #[test]
    fn plate_example_renders_wire_text_with_catalog_id() {
        let text = generation_text(&plate_response(), &ActionCatalog::minihouse());
        assert!(text.starts_with("<|think_start|>"));
        assert!(text.ends_with("<|think_end|><|action_start|>[31, 'find a Plate']<|action_end|>"), "{text}");
        assert_eq!(parse_generation(&text, EnvKind::High).unwrap(), plate_response());
    }

    #[test]
    fn low_level_action_is_seven_slot_tokens_in_order() {
        let v = vocab();
        let a = LowLevelAction([57, 74, 27, 0, 60, 90, 1]);
        let toks = encode_action(&ResponseAction::Low(a)).unwrap();
        let nums: Vec<u8> = toks.iter().map(|&t| v.as_int(t).unwrap()).collect();
        assert_eq!(nums, vec![57, 74, 27, 0, 60, 90, 1]);
    }

    #[test]
    fn unknown_name_is_rejected() {
        let r = StructuredResponse::bare(Reflection::Continue, ResponseAction::High(HighLevelAction::find("Spaceship")));
        assert_eq!(encode_response(&r), Err(CodecError::UnknownSymbol("Spaceship".into())));
    }

    #[test]
    fn malformed_sequences_fail_with_reason() {
        let v = vocab();
        let mut toks = encode_response(&plate_response()).unwrap();
        toks.pop();
        assert_eq!(decode_response(&toks, EnvKind::High), Err(ParseFailure::UnclosedAction));

        let six = StructuredResponse::bare(Reflection::Continue, ResponseAction::Low(LowLevelAction([1, 2, 3, 4, 5, 6, 7])));
        let mut toks = encode_response(&six).unwrap();
        let end = toks.len() - 2;
        toks.remove(end);
        assert_eq!(decode_response(&toks, EnvKind::Low), Err(ParseFailure::BadArity));

        assert_eq!(decode_response(&[], EnvKind::Low), Err(ParseFailure::Empty));
        assert_eq!(decode_response(&[v.int(3).unwrap()], EnvKind::Low), Err(ParseFailure::MissingThinkStart));
    }

    #[test]
    fn second_block_is_rejected() {
        let toks = encode_response(&plate_response()).unwrap();
        let doubled: Vec<_> = toks.iter().chain(&toks).copied().collect();
        assert_eq!(decode_response(&doubled, EnvKind::High), Err(ParseFailure::DuplicateBlock));
    }

    #[test]
    fn low_level_generation_text_round_trips() {
        let resp = StructuredResponse {
            visual: vec![
                VisualEntry { color: Color::Red, shape: Shape::Star, coord: [35, 15, 17] },
                VisualEntry { color: Color::Orange, shape: Shape::Cylinder, coord: [54, 81, 18] },
            ],
            reflection: Reflection::Replan,
            plan: vec![PlanStep::Phase(Phase::Hover), PlanStep::Phase(Phase::Grasp)],
            action: ResponseAction::Low(LowLevelAction([35, 15, 27, 0, 60, 90, 1])),
        };
        let catalog = ActionCatalog::minihouse();
        let text = generation_text(&resp, &catalog);
        assert!(text.contains("a red star at [35, 15, 17] and an orange cylinder at [54, 81, 18]."));
        assert_eq!(parse_generation(&text, EnvKind::Low).unwrap(), resp);
    }

    #[test]
    fn high_level_generation_text_round_trips() {
        let resp = StructuredResponse {
            visual: vec![],
            reflection: Reflection::SubgoalDone(2),
            plan: vec![
                PlanStep::Skill(Skill::Find),
                PlanStep::Name("Fridge".into()),
                PlanStep::Skill(Skill::PutDown),
            ],
            action: ResponseAction::High(HighLevelAction::find("Fridge")),
        };
        let catalog = ActionCatalog::minihouse();
        let text = generation_text(&resp, &catalog);
        assert!(text.contains("language_plan: 1. find a Fridge\n2. put down the object in hand"));
        assert_eq!(parse_generation(&text, EnvKind::High).unwrap(), resp);
    }

    fn arb_plan_step() -> impl Strategy<Value = PlanStep> {
        let names = crate::env_high::catalog::all_names();
        prop_oneof![
            (0..Skill::ALL.len()).prop_map(|i| PlanStep::Skill(Skill::ALL[i])),
            (0..Phase::ALL.len()).prop_map(|i| PlanStep::Phase(Phase::ALL[i])),
            (0..names.len()).prop_map(move |i| PlanStep::Name(names[i].clone())),
        ]
    }

    fn arb_response() -> impl Strategy<Value = StructuredResponse> {
        let names = crate::env_high::catalog::all_names();
        let visual = prop::collection::vec(
            (0..Color::ALL.len(), 0..Shape::ALL.len(), [0u8..=100, 0u8..=100, 0u8..=100]).prop_map(|(c, s, coord)| {
                VisualEntry { color: Color::ALL[c], shape: Shape::ALL[s], coord }
            }),
            0..4,
        );
        let reflections = Reflection::alphabet();
        let action = prop_oneof![
            (0..Skill::ALL.len(), 0..names.len()).prop_map(move |(s, n)| {
                let skill = Skill::ALL[s];
                let target = skill.takes_target().then(|| names[n].clone());
                ResponseAction::High(HighLevelAction { skill, target })
            }),
            [0u8..=120, 0u8..=120, 0u8..=120, 0u8..=120, 0u8..=120, 0u8..=120, 0u8..=120]
                .prop_map(|a| ResponseAction::Low(LowLevelAction(a))),
        ];
        (visual, 0..reflections.len(), prop::collection::vec(arb_plan_step(), 0..6), action).prop_map(
            move |(visual, r, plan, action)| StructuredResponse { visual, reflection: reflections[r], plan, action },
        )
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(resp in arb_response()) {
            let toks = encode_response(&resp).unwrap();
            let mode = resp.action.env();
            prop_assert_eq!(decode_response(&toks, mode).unwrap(), resp);
        }

        #[test]
        fn decode_is_total(raw in prop::collection::vec(0u16..(vocab().len() as u16), 0..40), low in any::<bool>()) {
            let toks: Vec<TokenId> = raw.into_iter().map(TokenId).collect();
            let mode = if low { EnvKind::Low } else { EnvKind::High };
            let _ = decode_response(&toks, mode);
        }

        #[test]
        fn valid_sequences_have_exactly_one_block_each(resp in arb_response()) {
            let v = vocab();
            let toks = encode_response(&resp).unwrap();
            let count = |t: Tag| toks.iter().filter(|&&x| x == v.tag(t)).count();
            prop_assert_eq!(count(Tag::ThinkStart), 1);
            prop_assert_eq!(count(Tag::ActionStart), 1);
            let ts = toks.iter().position(|&x| x == v.tag(Tag::ThinkEnd)).unwrap();
            let as_ = toks.iter().position(|&x| x == v.tag(Tag::ActionStart)).unwrap();
            prop_assert!(ts < as_);
        }
    }
}
