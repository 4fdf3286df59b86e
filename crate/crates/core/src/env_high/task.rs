//! Task templates, goal predicates and the seen/unseen task suites.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::catalog;
use crate::types::Split;
use crate::vocab::{vocab, Marker, TokenId, NUM_STYLES};

pub const DEFAULT_HORIZON_HIGH: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTemplate {
    PickPlace,
    PickTwo,
    Clean,
    Heat,
    Cool,
    Examine,
    /// MiniTable: put one object into a container.
    PlaceIn,
}

impl TaskTemplate {
    pub const ALL: [TaskTemplate; 7] = [
        TaskTemplate::PickPlace,
        TaskTemplate::PickTwo,
        TaskTemplate::Clean,
        TaskTemplate::Heat,
        TaskTemplate::Cool,
        TaskTemplate::Examine,
        TaskTemplate::PlaceIn,
    ];

    pub const HOUSE: [TaskTemplate; 6] = [
        TaskTemplate::PickPlace,
        TaskTemplate::PickTwo,
        TaskTemplate::Clean,
        TaskTemplate::Heat,
        TaskTemplate::Cool,
        TaskTemplate::Examine,
    ];

    pub fn token_surface(self) -> &'static str {
        match self {
            TaskTemplate::PickPlace => "task:pick_place",
            TaskTemplate::PickTwo => "task:pick_two",
            TaskTemplate::Clean => "task:clean",
            TaskTemplate::Heat => "task:heat",
            TaskTemplate::Cool => "task:cool",
            TaskTemplate::Examine => "task:examine",
            TaskTemplate::PlaceIn => "task:place_in",
        }
    }

    pub fn id(self) -> &'static str {
        self.token_surface().trim_start_matches("task:")
    }

    pub fn from_id(s: &str) -> Option<Self> {
        TaskTemplate::ALL.into_iter().find(|t| t.id() == s)
    }

    fn objects(self) -> &'static [&'static str] {
        match self {
            TaskTemplate::PickPlace | TaskTemplate::PickTwo => catalog::OBJECTS,
            TaskTemplate::Clean => catalog::CLEANABLE,
            TaskTemplate::Heat => catalog::HEATABLE,
            TaskTemplate::Cool => catalog::COOLABLE,
            TaskTemplate::Examine => catalog::EXAMINABLE,
            TaskTemplate::PlaceIn => &[],
        }
    }

    fn destinations(self) -> Vec<Option<&'static str>> {
        match self {
            TaskTemplate::Examine => vec![None],
            TaskTemplate::Heat => {
                catalog::PLACE_DESTINATIONS.iter().filter(|d| **d != "Fridge").map(|d| Some(*d)).collect()
            }
            TaskTemplate::PlaceIn => vec![],
            _ => catalog::PLACE_DESTINATIONS.iter().map(|d| Some(*d)).collect(),
        }
    }

    /// Instruction text for paraphrase `style`.
    pub fn instruction(self, obj: &str, dest: Option<&str>, style: u8) -> String {
        let d = dest.unwrap_or("");
        let style = style % NUM_STYLES;
        match (self, style) {
            (TaskTemplate::PickPlace, 0) => format!("Put the {obj} in the {d}."),
            (TaskTemplate::PickPlace, 1) => format!("Place the {obj} into the {d}."),
            (TaskTemplate::PickPlace, 2) => format!("Move the {obj} over to the {d}."),
            (TaskTemplate::PickPlace, _) => format!("Take the {obj} and leave it in the {d}."),
            (TaskTemplate::PickTwo, 0) => format!("Put two {obj}s in the {d}."),
            (TaskTemplate::PickTwo, 1) => format!("Place both {obj}s into the {d}."),
            (TaskTemplate::PickTwo, 2) => format!("Move a pair of {obj}s to the {d}."),
            (TaskTemplate::PickTwo, _) => format!("Gather two {obj}s in the {d}."),
            (TaskTemplate::Clean, 0) => format!("Put a washed {obj} in the {d}."),
            (TaskTemplate::Clean, 1) => format!("Clean the {obj} and place it in the {d}."),
            (TaskTemplate::Clean, 2) => format!("Rinse the {obj}, then leave it in the {d}."),
            (TaskTemplate::Clean, _) => format!("Wash the {obj} and put it in the {d}."),
            (TaskTemplate::Heat, 0) => format!("Put a heated {obj} in the {d}."),
            (TaskTemplate::Heat, 1) => format!("Warm the {obj} and place it in the {d}."),
            (TaskTemplate::Heat, 2) => format!("Microwave the {obj}, then leave it in the {d}."),
            (TaskTemplate::Heat, _) => format!("Heat the {obj} and put it in the {d}."),
            (TaskTemplate::Cool, 0) => format!("Put a chilled {obj} in the {d}."),
            (TaskTemplate::Cool, 1) => format!("Cool the {obj} and place it in the {d}."),
            (TaskTemplate::Cool, 2) => format!("Refrigerate the {obj}, then leave it in the {d}."),
            (TaskTemplate::Cool, _) => format!("Chill the {obj} and put it in the {d}."),
            (TaskTemplate::Examine, 0) => format!("Examine the {obj} under the lamp."),
            (TaskTemplate::Examine, 1) => format!("Look at the {obj} in the light of the lamp."),
            (TaskTemplate::Examine, 2) => format!("Hold the {obj} up to the desk lamp."),
            (TaskTemplate::Examine, _) => format!("Inspect the {obj} by lamplight."),
            (TaskTemplate::PlaceIn, _) => format!("Put the {obj} into the {d}."),
        }
    }
}

impl fmt::Display for TaskTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Goal/subgoal predicates, written as s-expressions: `(inside Apple Fridge)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Predicate {
    Holding(String),
    Inside(String, String),
    IsClean(String),
    IsHot(String),
    IsCool(String),
    IsSliced(String),
    IsOn(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse predicate {0:?}")]
pub struct PredicateParseError(pub String);

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Holding(x) => write!(f, "(holding {x})"),
            Predicate::Inside(x, r) => write!(f, "(inside {x} {r})"),
            Predicate::IsClean(x) => write!(f, "(isClean {x})"),
            Predicate::IsHot(x) => write!(f, "(isHot {x})"),
            Predicate::IsCool(x) => write!(f, "(isCool {x})"),
            Predicate::IsSliced(x) => write!(f, "(isSliced {x})"),
            Predicate::IsOn(x) => write!(f, "(isOn {x})"),
        }
    }
}

impl std::str::FromStr for Predicate {
    type Err = PredicateParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PredicateParseError(s.to_string());
        let inner = s.trim().strip_prefix('(').and_then(|x| x.strip_suffix(')')).ok_or_else(err)?;
        let parts: Vec<&str> = inner.split_whitespace().collect();
        let one = |p: &[&str]| if p.len() == 2 { Ok(p[1].to_string()) } else { Err(err()) };
        match parts.first().copied() {
            Some("holding") => one(&parts).map(Predicate::Holding),
            Some("isClean") => one(&parts).map(Predicate::IsClean),
            Some("isHot") => one(&parts).map(Predicate::IsHot),
            Some("isCool") => one(&parts).map(Predicate::IsCool),
            Some("isSliced") => one(&parts).map(Predicate::IsSliced),
            Some("isOn") => one(&parts).map(Predicate::IsOn),
            Some("inside") if parts.len() == 3 => Ok(Predicate::Inside(parts[1].into(), parts[2].into())),
            _ => Err(err()),
        }
    }
}

impl From<Predicate> for String {
    fn from(p: Predicate) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Predicate {
    type Error = PredicateParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task: {0}")]
pub struct UnknownTask(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub template: TaskTemplate,
    pub object: String,
    pub destination: Option<String>,
    pub style: u8,
    pub instruction: String,
    pub seed: u64,
    pub split: Split,
    pub horizon: u32,
    pub goal_conditions: Vec<Predicate>,
    pub subgoals: Vec<Predicate>,
}

fn combo_hash(template: TaskTemplate, obj: &str, dest: Option<&str>) -> [u8; 32] {
    Sha256::digest(format!("{}|{obj}|{}", template.id(), dest.unwrap_or("-")).as_bytes()).into()
}

/// Held-out (template, object, destination) combinations: the fifth of each
/// template's combinations with the smallest hash (at least one).
pub(crate) fn combo_is_unseen(template: TaskTemplate, obj: &str, dest: Option<&str>) -> bool {
    static HELD_OUT: OnceLock<BTreeSet<[u8; 32]>> = OnceLock::new();
    HELD_OUT
        .get_or_init(|| {
            let mut out = BTreeSet::new();
            for t in TaskTemplate::HOUSE {
                let mut hs: Vec<[u8; 32]> = all_combos().into_iter().filter(|c| c.0 == t).map(|(t, o, d)| combo_hash(t, o, d)).collect();
                hs.sort();
                let k = hs.len().div_ceil(5);
                out.extend(hs.into_iter().take(k));
            }
            out
        })
        .contains(&combo_hash(template, obj, dest))
}

impl TaskSpec {
    pub fn new(template: TaskTemplate, object: &str, destination: Option<&str>, style: u8, seed: u64) -> Result<Self, UnknownTask> {
        let bad = || UnknownTask(format!("{} {object} {destination:?}", template.id()));
        if template == TaskTemplate::PlaceIn || !template.objects().contains(&object) {
            return Err(bad());
        }
        if !template.destinations().contains(&destination) {
            return Err(bad());
        }
        let o = object.to_string();
        let inside = |x: &str| Predicate::Inside(x.to_string(), destination.unwrap_or_default().to_string());
        let (goal_conditions, subgoals) = match template {
            TaskTemplate::PickPlace => (vec![inside(&o)], vec![Predicate::Holding(o.clone()), inside(&o)]),
            TaskTemplate::PickTwo => {
                let o2 = format!("{o}_2");
                (
                    vec![inside(&o), inside(&o2)],
                    vec![Predicate::Holding(o.clone()), inside(&o), Predicate::Holding(o2.clone()), inside(&o2)],
                )
            }
            TaskTemplate::Clean => (
                vec![Predicate::IsClean(o.clone()), inside(&o)],
                vec![Predicate::Holding(o.clone()), Predicate::IsClean(o.clone()), inside(&o)],
            ),
            TaskTemplate::Heat => (
                vec![Predicate::IsHot(o.clone()), inside(&o)],
                vec![Predicate::Holding(o.clone()), Predicate::IsHot(o.clone()), inside(&o)],
            ),
            TaskTemplate::Cool => (
                vec![Predicate::IsCool(o.clone()), inside(&o)],
                vec![Predicate::Holding(o.clone()), Predicate::IsCool(o.clone()), inside(&o)],
            ),
            TaskTemplate::Examine => (
                vec![Predicate::Holding(o.clone()), Predicate::IsOn("DeskLamp".into())],
                vec![Predicate::Holding(o.clone()), Predicate::IsOn("DeskLamp".into())],
            ),
            TaskTemplate::PlaceIn => unreachable!(),
        };
        let split = if combo_is_unseen(template, object, destination) { Split::Unseen } else { Split::Seen };
        Ok(TaskSpec {
            template,
            object: o,
            destination: destination.map(str::to_string),
            style: style % NUM_STYLES,
            instruction: template.instruction(object, destination, style),
            seed,
            split,
            horizon: DEFAULT_HORIZON_HIGH,
            goal_conditions,
            subgoals,
        })
    }

    /// `<|instr|> task style object [destination]`
    pub fn instruction_tokens(&self) -> Vec<TokenId> {
        let v = vocab();
        let mut out = vec![v.marker(Marker::Instr), v.task(self.template), v.style(self.style)];
        out.extend(v.name(&self.object));
        out.extend(self.destination.as_deref().and_then(|d| v.name(d)));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("task serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, UnknownTask> {
        let t: TaskSpec = serde_json::from_str(s).map_err(|e| UnknownTask(e.to_string()))?;
        // Re-derive to reject hand-edited specs that no template produces.
        let fresh = TaskSpec::new(t.template, &t.object, t.destination.as_deref(), t.style, t.seed)?;
        Ok(TaskSpec { horizon: t.horizon.max(1), ..fresh })
    }
}

/// Every (template, object, destination) combination of MiniHouse.
pub fn all_combos() -> Vec<(TaskTemplate, &'static str, Option<&'static str>)> {
    let mut out = Vec::new();
    for t in TaskTemplate::HOUSE {
        for &o in t.objects() {
            for d in t.destinations() {
                out.push((t, o, d));
            }
        }
    }
    out
}

/// `n` tasks drawn from the split. Seen tasks use paraphrase styles 0-1;
/// unseen tasks draw from held-out combinations and all four styles.
pub fn task_suite(split: Split, n: usize, seed: u64) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0001);
    let combos: Vec<_> = all_combos()
        .into_iter()
        .filter(|(t, o, d)| combo_is_unseen(*t, o, *d) == (split == Split::Unseen))
        .collect();
    let styles: &[u8] = match split {
        Split::Seen => &[0, 1],
        Split::Unseen => &[0, 1, 2, 3],
    };
    // Balance templates: cycle through them, sampling a combination of each.
    let mut by_template: Vec<Vec<_>> = TaskTemplate::HOUSE
        .iter()
        .map(|t| combos.iter().filter(|c| c.0 == *t).cloned().collect::<Vec<_>>())
        .filter(|v: &Vec<_>| !v.is_empty())
        .collect();
    for v in &mut by_template {
        v.shuffle(&mut rng);
    }
    (0..n)
        .map(|i| {
            let pool = &by_template[i % by_template.len()];
            let (t, o, d) = pool[(i / by_template.len()) % pool.len()];
            let style = *styles.choose(&mut rng).unwrap();
            let task_seed = rand::Rng::gen::<u64>(&mut rng);
            TaskSpec::new(t, o, d, style, task_seed).expect("suite combos are valid")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicates_round_trip_through_text() {
        for p in [
            Predicate::Holding("Apple".into()),
            Predicate::Inside("Apple_2".into(), "Fridge".into()),
            Predicate::IsClean("Apple".into()),
            Predicate::IsOn("DeskLamp".into()),
        ] {
            assert_eq!(p.to_string().parse::<Predicate>().unwrap(), p);
        }
        assert!("(inside Apple)".parse::<Predicate>().is_err());
    }

    #[test]
    fn washed_apple_in_fridge_goal() {
        let t = TaskSpec::new(TaskTemplate::Clean, "Apple", Some("Fridge"), 0, 1).unwrap();
        assert_eq!(
            t.goal_conditions,
            vec![Predicate::IsClean("Apple".into()), Predicate::Inside("Apple".into(), "Fridge".into())]
        );
        assert_eq!(t.horizon, 30);
    }

    #[test]
    fn splits_are_disjoint_and_nonempty() {
        let seen = task_suite(Split::Seen, 60, 0);
        let unseen = task_suite(Split::Unseen, 60, 0);
        assert!(seen.iter().all(|t| t.split == Split::Seen && t.style < 2));
        assert!(unseen.iter().all(|t| t.split == Split::Unseen));
        for u in &unseen {
            assert!(!seen.iter().any(|s| s.template == u.template && s.object == u.object && s.destination == u.destination));
        }
        let templates: std::collections::BTreeSet<_> = unseen.iter().map(|t| t.template).collect();
        assert_eq!(templates.len(), 6);
    }

    #[test]
    fn json_round_trip() {
        let t = TaskSpec::new(TaskTemplate::Heat, "Mug", Some("Shelf"), 1, 9).unwrap();
        assert_eq!(TaskSpec::from_json(&t.to_json()).unwrap(), t);
        assert!(t.to_json().contains("\"(isHot Mug)\""));
    }

    #[test]
    fn rejects_impossible_combo() {
        assert!(TaskSpec::new(TaskTemplate::Heat, "Book", Some("Shelf"), 0, 0).is_err());
        assert!(TaskSpec::new(TaskTemplate::Heat, "Mug", Some("Fridge"), 0, 0).is_err());
    }
}
