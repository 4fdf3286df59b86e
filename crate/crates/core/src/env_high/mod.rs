//! MiniHouse: a deterministic symbolic household with ALFRED-style skills.

pub mod catalog;
mod expert;
mod state;
mod task;

pub use expert::{expert_plan_high, Unsolvable};
pub use state::{
    check_goal, render_observation, reset, step, AgentState, HouseState, MiniHouse, ObjectState, Observation,
    ReceptacleState, StepOutcome,
};
pub use task::{all_combos, task_suite, Predicate, PredicateParseError, TaskSpec, TaskTemplate, UnknownTask, DEFAULT_HORIZON_HIGH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Find,
    PickUp,
    PutDown,
    Drop,
    Open,
    Close,
    TurnOn,
    TurnOff,
    Slice,
}

impl Skill {
    pub const ALL: [Skill; 9] = [
        Skill::Find,
        Skill::PickUp,
        Skill::PutDown,
        Skill::Drop,
        Skill::Open,
        Skill::Close,
        Skill::TurnOn,
        Skill::TurnOff,
        Skill::Slice,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            Skill::Find => "find",
            Skill::PickUp => "pick_up",
            Skill::PutDown => "put_down",
            Skill::Drop => "drop",
            Skill::Open => "open",
            Skill::Close => "close",
            Skill::TurnOn => "turn_on",
            Skill::TurnOff => "turn_off",
            Skill::Slice => "slice",
        }
    }

    pub fn from_surface(s: &str) -> Option<Self> {
        Skill::ALL.into_iter().find(|k| k.surface() == s)
    }

    /// PutDown and Drop act on whatever is held.
    pub fn takes_target(self) -> bool {
        !matches!(self, Skill::PutDown | Skill::Drop)
    }

    /// Leading words of the natural-language action phrase.
    pub fn verb(self) -> &'static str {
        match self {
            Skill::Find => "find a",
            Skill::PickUp => "pick up the",
            Skill::PutDown => "put down the object in hand",
            Skill::Drop => "drop the object in hand",
            Skill::Open => "open the",
            Skill::Close => "close the",
            Skill::TurnOn => "turn on the",
            Skill::TurnOff => "turn off the",
            Skill::Slice => "slice the",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HighLevelAction {
    pub skill: Skill,
    pub target: Option<String>,
}

impl HighLevelAction {
    pub fn new(skill: Skill, target: impl Into<String>) -> Self {
        HighLevelAction { skill, target: Some(target.into()) }
    }

    pub fn find(t: impl Into<String>) -> Self {
        Self::new(Skill::Find, t)
    }

    pub fn pick_up(t: impl Into<String>) -> Self {
        Self::new(Skill::PickUp, t)
    }

    pub fn put_down() -> Self {
        HighLevelAction { skill: Skill::PutDown, target: None }
    }

    pub fn drop_held() -> Self {
        HighLevelAction { skill: Skill::Drop, target: None }
    }

    pub fn open(t: impl Into<String>) -> Self {
        Self::new(Skill::Open, t)
    }

    pub fn close(t: impl Into<String>) -> Self {
        Self::new(Skill::Close, t)
    }

    pub fn turn_on(t: impl Into<String>) -> Self {
        Self::new(Skill::TurnOn, t)
    }

    pub fn turn_off(t: impl Into<String>) -> Self {
        Self::new(Skill::TurnOff, t)
    }

    pub fn slice(t: impl Into<String>) -> Self {
        Self::new(Skill::Slice, t)
    }

    /// `find a Plate`, `put down the object in hand`, ...
    pub fn phrase(&self) -> String {
        match (&self.target, self.skill.takes_target()) {
            (Some(t), true) => format!("{} {t}", self.skill.verb()),
            _ => self.skill.verb().to_string(),
        }
    }

    pub fn parse_phrase(s: &str) -> Option<Self> {
        let s = s.trim();
        for skill in Skill::ALL {
            if !skill.takes_target() {
                if s == skill.verb() {
                    return Some(HighLevelAction { skill, target: None });
                }
                continue;
            }
            if let Some(rest) = s.strip_prefix(skill.verb()).and_then(|r| r.strip_prefix(' ')) {
                if !rest.is_empty() && !rest.contains(' ') {
                    return Some(HighLevelAction::new(skill, rest));
                }
            }
        }
        None
    }
}

impl std::fmt::Display for HighLevelAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.phrase())
    }
}

/// Enumerates every syntactically meaningful action and assigns it an id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCatalog {
    actions: Vec<HighLevelAction>,
}

impl ActionCatalog {
    pub fn from_actions(actions: Vec<HighLevelAction>) -> Self {
        ActionCatalog { actions }
    }

    /// The fixed MiniHouse action list: finds (receptacles, fixtures, objects),
    /// pick-ups, put-down, drop, open/close, toggles and slices.
    pub fn minihouse() -> Self {
        let mut objects = Vec::new();
        for o in catalog::OBJECTS {
            objects.push(o.to_string());
            objects.push(format!("{o}_2"));
        }
        let mut a = Vec::new();
        a.extend(catalog::RECEPTACLES.iter().map(|r| HighLevelAction::find(*r)));
        a.extend(catalog::FIXTURES.iter().map(|(f, _)| HighLevelAction::find(*f)));
        a.extend(objects.iter().map(|o| HighLevelAction::find(o.clone())));
        a.extend(objects.iter().map(|o| HighLevelAction::pick_up(o.clone())));
        a.push(HighLevelAction::put_down());
        a.push(HighLevelAction::drop_held());
        a.extend(catalog::OPENABLE.iter().map(|r| HighLevelAction::open(*r)));
        a.extend(catalog::OPENABLE.iter().map(|r| HighLevelAction::close(*r)));
        a.extend(catalog::TOGGLEABLE.iter().map(|r| HighLevelAction::turn_on(*r)));
        a.extend(catalog::TOGGLEABLE.iter().map(|r| HighLevelAction::turn_off(*r)));
        a.extend(objects.iter().filter(|o| catalog::is_sliceable(o)).map(|o| HighLevelAction::slice(o.clone())));
        ActionCatalog { actions: a }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn id_of(&self, a: &HighLevelAction) -> Option<usize> {
        self.actions.iter().position(|x| x == a)
    }

    pub fn get(&self, id: usize) -> Option<&HighLevelAction> {
        self.actions.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &HighLevelAction> {
        self.actions.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrases_round_trip() {
        for a in ActionCatalog::minihouse().iter() {
            assert_eq!(HighLevelAction::parse_phrase(&a.phrase()).as_ref(), Some(a), "{a}");
        }
    }

    #[test]
    fn plate_find_has_id_31() {
        let c = ActionCatalog::minihouse();
        assert_eq!(c.id_of(&HighLevelAction::find("Plate")), Some(31));
        assert_eq!(HighLevelAction::find("Plate").phrase(), "find a Plate");
    }

    #[test]
    fn targetless_skills_render_fixed_phrases() {
        assert_eq!(HighLevelAction::put_down().phrase(), "put down the object in hand");
        assert_eq!(HighLevelAction::turn_on("Faucet").phrase(), "turn on the Faucet");
    }
}
