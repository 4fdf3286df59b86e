//! The closed, versioned token vocabulary shared by every module.
//!
//! Every surface form is a single token: structural tags, segment markers,
//! the integers 0..=120 (coordinates use 0..=100, orientations the full
//! range), palette colors and shapes, reflection and plan symbols, skills,
//! MiniHouse names, feedback codes and a few query words. Token ids are
//! positions in [`Vocabulary::tokens`] and never change within a version.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::env_high::catalog;
use crate::env_high::{Skill, TaskTemplate};
use crate::env_low::palette::{Color, Shape};
use crate::response::Reflection;
use crate::types::FeedbackCode;

pub const VOCAB_VERSION: &str = "1";

/// Largest integer token; coordinates stop at [`MAX_COORD`].
pub const MAX_INT: u8 = 120;
pub const MAX_COORD: u8 = 100;

/// Largest `k` in the `subgoal-done:k` reflection symbol.
pub const MAX_SUBGOAL_INDEX: u8 = 8;

/// Number of paraphrase styles per instruction template.
pub const NUM_STYLES: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u16);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Tag,
    Special,
    Marker,
    Int,
    Color,
    Shape,
    Reflection,
    Skill,
    Phase,
    Name,
    Feedback,
    Property,
    Task,
    Style,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    pub surface: String,
    pub class: TokenClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    ThinkStart,
    ThinkEnd,
    ActionStart,
    ActionEnd,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::ThinkStart, Tag::ThinkEnd, Tag::ActionStart, Tag::ActionEnd];

    pub fn surface(self) -> &'static str {
        match self {
            Tag::ThinkStart => "<|think_start|>",
            Tag::ThinkEnd => "<|think_end|>",
            Tag::ActionStart => "<|action_start|>",
            Tag::ActionEnd => "<|action_end|>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Bos,
    Unk,
    Mask,
    None,
}

impl Special {
    pub const ALL: [Special; 4] = [Special::Bos, Special::Unk, Special::Mask, Special::None];

    pub fn surface(self) -> &'static str {
        match self {
            Special::Bos => "<|bos|>",
            Special::Unk => "<|unk|>",
            Special::Mask => "[MASK]",
            Special::None => "none",
        }
    }
}

/// Segment markers that structure a state input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    Instr,
    Hist,
    Thinking,
    Act,
    Fb,
    Obs,
    Grip,
    Query,
    Ext,
}

impl Marker {
    pub const ALL: [Marker; 9] = [
        Marker::Instr,
        Marker::Hist,
        Marker::Thinking,
        Marker::Act,
        Marker::Fb,
        Marker::Obs,
        Marker::Grip,
        Marker::Query,
        Marker::Ext,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            Marker::Instr => "<|instr|>",
            Marker::Hist => "<|hist|>",
            Marker::Thinking => "<|thinking|>",
            Marker::Act => "<|act|>",
            Marker::Fb => "<|fb|>",
            Marker::Obs => "<|obs|>",
            Marker::Grip => "<|grip|>",
            Marker::Query => "<|query|>",
            Marker::Ext => "<|ext|>",
        }
    }
}

/// Low-level manipulation phases, used as plan-step symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Hover,
    Grasp,
    Lift,
    Move,
    Release,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Hover, Phase::Grasp, Phase::Lift, Phase::Move, Phase::Release];

    pub fn surface(self) -> &'static str {
        match self {
            Phase::Hover => "hover",
            Phase::Grasp => "grasp",
            Phase::Lift => "lift",
            Phase::Move => "move",
            Phase::Release => "release",
        }
    }
}

/// Object state flags shown in MiniHouse observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Open,
    Closed,
    On,
    Off,
    Clean,
    Hot,
    Cold,
    Sliced,
}

impl Property {
    pub const ALL: [Property; 8] = [
        Property::Open,
        Property::Closed,
        Property::On,
        Property::Off,
        Property::Clean,
        Property::Hot,
        Property::Cold,
        Property::Sliced,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            Property::Open => "p:open",
            Property::Closed => "p:closed",
            Property::On => "p:on",
            Property::Off => "p:off",
            Property::Clean => "p:clean",
            Property::Hot => "p:hot",
            Property::Cold => "p:cold",
            Property::Sliced => "p:sliced",
        }
    }
}

/// Words used by environment-anchored QA prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryWord {
    Masked,
    Reorder,
    CoordOf,
    ObjectAt,
    RelLocation,
    IsRel,
    Leftmost,
    Rightmost,
    Yes,
    No,
}

impl QueryWord {
    pub const ALL: [QueryWord; 10] = [
        QueryWord::Masked,
        QueryWord::Reorder,
        QueryWord::CoordOf,
        QueryWord::ObjectAt,
        QueryWord::RelLocation,
        QueryWord::IsRel,
        QueryWord::Leftmost,
        QueryWord::Rightmost,
        QueryWord::Yes,
        QueryWord::No,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            QueryWord::Masked => "q:masked",
            QueryWord::Reorder => "q:reorder",
            QueryWord::CoordOf => "q:coord_of",
            QueryWord::ObjectAt => "q:object_at",
            QueryWord::RelLocation => "q:rel_location",
            QueryWord::IsRel => "q:is_rel",
            QueryWord::Leftmost => "leftmost",
            QueryWord::Rightmost => "rightmost",
            QueryWord::Yes => "yes",
            QueryWord::No => "no",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: String,
    pub tokens: Vec<Token>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
}

static VOCAB: OnceLock<Vocabulary> = OnceLock::new();

/// The process-wide vocabulary for [`VOCAB_VERSION`].
pub fn vocab() -> &'static Vocabulary {
    VOCAB.get_or_init(Vocabulary::build)
}

impl Vocabulary {
    fn build() -> Self {
        let mut entries: Vec<(String, TokenClass)> = Vec::new();
        let mut push = |s: &str, c: TokenClass| entries.push((s.to_string(), c));
        for t in Tag::ALL {
            push(t.surface(), TokenClass::Tag);
        }
        for s in Special::ALL {
            push(s.surface(), TokenClass::Special);
        }
        for m in Marker::ALL {
            push(m.surface(), TokenClass::Marker);
        }
        for n in 0..=MAX_INT {
            push(&n.to_string(), TokenClass::Int);
        }
        for c in Color::ALL {
            push(c.as_str(), TokenClass::Color);
        }
        for s in Shape::ALL {
            push(s.as_str(), TokenClass::Shape);
        }
        for r in Reflection::alphabet() {
            push(&r.surface(), TokenClass::Reflection);
        }
        for s in Skill::ALL {
            push(s.surface(), TokenClass::Skill);
        }
        for p in Phase::ALL {
            push(p.surface(), TokenClass::Phase);
        }
        for n in catalog::all_names() {
            push(&n, TokenClass::Name);
        }
        for f in FeedbackCode::ALL {
            push(f.surface(), TokenClass::Feedback);
        }
        for p in Property::ALL {
            push(p.surface(), TokenClass::Property);
        }
        for t in TaskTemplate::ALL {
            push(t.token_surface(), TokenClass::Task);
        }
        for k in 0..NUM_STYLES {
            push(&format!("style:{k}"), TokenClass::Style);
        }
        for q in QueryWord::ALL {
            push(q.surface(), TokenClass::Query);
        }
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(String, TokenClass)>) -> Self {
        let tokens: Vec<Token> = entries
            .into_iter()
            .enumerate()
            .map(|(i, (surface, class))| Token { id: TokenId(i as u16), surface, class })
            .collect();
        let mut v = Vocabulary { version: VOCAB_VERSION.to_string(), tokens, index: HashMap::new() };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self.tokens.iter().map(|t| (t.surface.clone(), t.id)).collect();
        assert_eq!(self.index.len(), self.tokens.len(), "duplicate surface in vocabulary");
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    /// Id for a surface that is known to exist; panics otherwise.
    pub fn expect(&self, surface: &str) -> TokenId {
        self.id(surface).unwrap_or_else(|| panic!("token {surface:?} not in vocabulary"))
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id.index()].surface
    }

    pub fn class(&self, id: TokenId) -> TokenClass {
        self.tokens[id.index()].class
    }

    pub fn get(&self, id: TokenId) -> Option<&Token> {
        self.tokens.get(id.index())
    }

    pub fn ids_of_class(&self, class: TokenClass) -> impl Iterator<Item = TokenId> + '_ {
        self.tokens.iter().filter(move |t| t.class == class).map(|t| t.id)
    }

    pub fn tag(&self, t: Tag) -> TokenId {
        self.expect(t.surface())
    }

    pub fn special(&self, s: Special) -> TokenId {
        self.expect(s.surface())
    }

    pub fn marker(&self, m: Marker) -> TokenId {
        self.expect(m.surface())
    }

    pub fn int(&self, n: u8) -> Option<TokenId> {
        (n <= MAX_INT).then(|| self.expect(&n.to_string()))
    }

    pub fn as_int(&self, id: TokenId) -> Option<u8> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Int => t.surface.parse().ok(),
            _ => None,
        }
    }

    pub fn color(&self, c: Color) -> TokenId {
        self.expect(c.as_str())
    }

    pub fn as_color(&self, id: TokenId) -> Option<Color> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Color => Color::parse(&t.surface),
            _ => None,
        }
    }

    pub fn shape(&self, s: Shape) -> TokenId {
        self.expect(s.as_str())
    }

    pub fn as_shape(&self, id: TokenId) -> Option<Shape> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Shape => Shape::parse(&t.surface),
            _ => None,
        }
    }

    pub fn skill(&self, s: Skill) -> TokenId {
        self.expect(s.surface())
    }

    pub fn as_skill(&self, id: TokenId) -> Option<Skill> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Skill => Skill::from_surface(&t.surface),
            _ => None,
        }
    }

    pub fn phase(&self, p: Phase) -> TokenId {
        self.expect(p.surface())
    }

    pub fn as_phase(&self, id: TokenId) -> Option<Phase> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Phase => Phase::ALL.into_iter().find(|p| p.surface() == t.surface),
            _ => None,
        }
    }

    pub fn name(&self, name: &str) -> Option<TokenId> {
        self.id(name).filter(|&id| self.class(id) == TokenClass::Name)
    }

    pub fn as_name(&self, id: TokenId) -> Option<&str> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Name => Some(&t.surface),
            _ => None,
        }
    }

    pub fn reflection(&self, r: Reflection) -> Option<TokenId> {
        self.id(&r.surface()).filter(|&id| self.class(id) == TokenClass::Reflection)
    }

    pub fn as_reflection(&self, id: TokenId) -> Option<Reflection> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Reflection => Reflection::from_surface(&t.surface),
            _ => None,
        }
    }

    pub fn feedback(&self, f: FeedbackCode) -> TokenId {
        self.expect(f.surface())
    }

    pub fn as_feedback(&self, id: TokenId) -> Option<FeedbackCode> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Feedback => FeedbackCode::ALL.into_iter().find(|f| f.surface() == t.surface),
            _ => None,
        }
    }

    pub fn property(&self, p: Property) -> TokenId {
        self.expect(p.surface())
    }

    pub fn as_property(&self, id: TokenId) -> Option<Property> {
        match self.get(id) {
            Some(t) if t.class == TokenClass::Property => Property::ALL.into_iter().find(|p| p.surface() == t.surface),
            _ => None,
        }
    }

    pub fn task(&self, t: TaskTemplate) -> TokenId {
        self.expect(t.token_surface())
    }

    pub fn style(&self, k: u8) -> TokenId {
        self.expect(&format!("style:{}", k.min(NUM_STYLES - 1)))
    }

    pub fn query(&self, q: QueryWord) -> TokenId {
        self.expect(q.surface())
    }

    /// Space-joined surfaces; the inverse of [`Vocabulary::parse_surfaces`].
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.surface(t)).collect::<Vec<_>>().join(" ")
    }

    /// Parses a space-separated surface string. Unknown surfaces are an error.
    pub fn parse_surfaces(&self, text: &str) -> Result<Vec<TokenId>, String> {
        text.split_whitespace()
            .map(|s| self.id(s).ok_or_else(|| s.to_string()))
            .collect()
    }

    /// Whitespace tokenization that maps unknown words to `<|unk|>`.
    pub fn tokenize_lossy(&self, text: &str) -> Vec<TokenId> {
        let unk = self.special(Special::Unk);
        text.split_whitespace()
            .map(|w| {
                let trimmed = w.trim_matches(|c: char| !c.is_alphanumeric() && c != '_');
                self.id(w).or_else(|| self.id(trimmed)).unwrap_or(unk)
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let mut v: Vocabulary = serde_json::from_str(s)?;
        v.reindex();
        Ok(v)
    }
}

/// Number of tokens in a sequence.
pub fn count_tokens(x: &[TokenId]) -> usize {
    x.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_are_single_tokens_with_exact_surfaces() {
        let v = vocab();
        for (tag, s) in Tag::ALL.iter().zip(["<|think_start|>", "<|think_end|>", "<|action_start|>", "<|action_end|>"]) {
            let id = v.tag(*tag);
            assert_eq!(v.surface(id), s);
            assert_eq!(v.class(id), TokenClass::Tag);
        }
    }

    #[test]
    fn id_surface_round_trip_is_identity() {
        let v = vocab();
        for t in &v.tokens {
            assert_eq!(v.id(&t.surface), Some(t.id));
        }
    }

    #[test]
    fn coordinate_and_orientation_ranges_are_covered() {
        let v = vocab();
        assert_eq!(v.ids_of_class(TokenClass::Int).count(), 121);
        assert_eq!(v.as_int(v.int(100).unwrap()), Some(100));
        assert_eq!(v.int(121), None);
    }

    #[test]
    fn json_round_trip_preserves_table() {
        let v = vocab();
        let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(&back, v);
        assert_eq!(back.id("<|action_end|>"), v.id("<|action_end|>"));
    }

    #[test]
    fn count_is_additive() {
        let v = vocab();
        let a = vec![v.tag(Tag::ThinkStart), v.tag(Tag::ThinkEnd)];
        let b = vec![v.int(3).unwrap()];
        let ab: Vec<_> = a.iter().chain(&b).copied().collect();
        assert_eq!(count_tokens(&[]), 0);
        assert_eq!(count_tokens(&ab), count_tokens(&a) + count_tokens(&b));
    }
}
