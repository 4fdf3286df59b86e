//! MiniHouse state, transition function and observation rendering.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::catalog;
use super::task::{Predicate, TaskSpec, TaskTemplate, UnknownTask};
use super::{HighLevelAction, Skill};
use crate::types::{EnvKind, Feedback, FeedbackCode};
use crate::vocab::{vocab, Marker, Property, Special, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectState {
    /// Receptacle holding the object; `None` while carried.
    pub location: Option<String>,
    pub fixture: bool,
    pub sliced: bool,
    pub clean: bool,
    pub hot: bool,
    pub cold: bool,
    /// Only fixtures carry a power state.
    pub on: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReceptacleState {
    pub openable: bool,
    pub open: bool,
    pub on: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub at: Option<String>,
    pub holding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HouseState {
    pub objects: BTreeMap<String, ObjectState>,
    pub receptacles: BTreeMap<String, ReceptacleState>,
    pub agent: AgentState,
    pub step: u32,
    pub horizon: u32,
    /// Subgoal predicates that already fired this episode.
    pub achieved: BTreeSet<Predicate>,
    pub last_feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub tokens: Vec<TokenId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub feedback: Feedback,
    pub done: bool,
    pub success: bool,
    pub subgoal_events: Vec<Predicate>,
}

fn task_hash(task: &TaskSpec) -> u64 {
    let d = Sha256::digest(format!("{}|{}|{:?}", task.template.id(), task.object, task.destination).as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Deterministic initial state for `(task, seed)`.
pub fn reset(task: &TaskSpec, seed: u64) -> Result<(HouseState, Observation), UnknownTask> {
    if task.template == TaskTemplate::PlaceIn {
        return Err(UnknownTask("place_in is a MiniTable template".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task_hash(task));
    let dest = task.destination.as_deref();
    let starts: Vec<&str> = catalog::START_RECEPTACLES.iter().copied().filter(|r| Some(*r) != dest).collect();

    let mut objects = BTreeMap::new();
    let place = |objects: &mut BTreeMap<String, ObjectState>, name: String, rng: &mut ChaCha8Rng| {
        let loc = starts.choose(rng).unwrap().to_string();
        objects.insert(
            name,
            ObjectState { location: Some(loc), fixture: false, sliced: false, clean: false, hot: false, cold: false, on: None },
        );
    };
    place(&mut objects, task.object.clone(), &mut rng);
    if task.template == TaskTemplate::PickTwo {
        place(&mut objects, format!("{}_2", task.object), &mut rng);
    }
    let mut others: Vec<&str> = catalog::OBJECTS.iter().copied().filter(|o| *o != task.object).collect();
    others.shuffle(&mut rng);
    let n_distractors = rng.gen_range(3..=5);
    for o in others.into_iter().take(n_distractors) {
        place(&mut objects, o.to_string(), &mut rng);
        if rng.gen_bool(0.25) {
            place(&mut objects, format!("{o}_2"), &mut rng);
        }
    }
    for (f, r) in catalog::FIXTURES {
        objects.insert(
            f.to_string(),
            ObjectState {
                location: Some(r.to_string()),
                fixture: true,
                sliced: false,
                clean: false,
                hot: false,
                cold: false,
                on: Some(false),
            },
        );
    }
    let receptacles = catalog::RECEPTACLES
        .iter()
        .map(|r| {
            let openable = catalog::is_openable(r);
            let on = catalog::is_toggleable(r).then_some(false);
            (r.to_string(), ReceptacleState { openable, open: !openable, on })
        })
        .collect();
    let state = HouseState {
        objects,
        receptacles,
        agent: AgentState::default(),
        step: 0,
        horizon: task.horizon,
        achieved: BTreeSet::new(),
        last_feedback: None,
    };
    let obs = render_observation(&state);
    Ok((state, obs))
}

impl HouseState {
    pub fn exists(&self, name: &str) -> bool {
        self.objects.contains_key(name) || self.receptacles.contains_key(name)
    }

    /// Objects whose location is `r`, in name order.
    pub fn contents(&self, r: &str) -> Vec<&str> {
        self.objects
            .iter()
            .filter(|(_, o)| o.location.as_deref() == Some(r))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// The receptacle the agent is standing at, if any.
    pub fn current_receptacle(&self) -> Option<&str> {
        let at = self.agent.at.as_deref()?;
        if self.receptacles.contains_key(at) {
            Some(at)
        } else {
            self.objects.get(at)?.location.as_deref()
        }
    }

    /// Whether the agent is close enough to interact with `name`.
    pub fn near(&self, name: &str) -> bool {
        let Some(at) = self.agent.at.as_deref() else { return false };
        if at == name {
            return true;
        }
        let loc_of = |n: &str| self.objects.get(n).and_then(|o| o.location.as_deref());
        loc_of(at) == Some(name) || loc_of(name) == Some(at)
    }

    fn enclosing_closed(&self, name: &str) -> Option<&str> {
        let r = self.objects.get(name)?.location.as_deref()?;
        self.receptacles.get(r).filter(|s| !s.open).map(|_| r)
    }

    fn is_on(&self, name: &str) -> Option<bool> {
        self.objects.get(name).and_then(|o| o.on).or_else(|| self.receptacles.get(name).and_then(|r| r.on))
    }

    fn set_on(&mut self, name: &str, v: bool) {
        if let Some(o) = self.objects.get_mut(name) {
            o.on = Some(v);
        } else if let Some(r) = self.receptacles.get_mut(name) {
            r.on = Some(v);
        }
    }

    pub fn holds(&self, p: &Predicate) -> bool {
        let obj = |x: &str| self.objects.get(x);
        match p {
            Predicate::Holding(x) => self.agent.holding.as_deref() == Some(x.as_str()),
            Predicate::Inside(x, r) => obj(x).and_then(|o| o.location.as_deref()) == Some(r.as_str()),
            Predicate::IsClean(x) => obj(x).map(|o| o.clean).unwrap_or(false),
            Predicate::IsHot(x) => obj(x).map(|o| o.hot).unwrap_or(false),
            Predicate::IsCool(x) => obj(x).map(|o| o.cold).unwrap_or(false),
            Predicate::IsSliced(x) => obj(x).map(|o| o.sliced).unwrap_or(false),
            Predicate::IsOn(x) => self.is_on(x).unwrap_or(false),
        }
    }
}

pub fn check_goal(state: &HouseState, task: &TaskSpec) -> bool {
    task.goal_conditions.iter().all(|p| state.holds(p))
}

/// Applies `action` (or a parse failure when `None`). Invalid actions only
/// advance the step counter.
pub fn step(state: &HouseState, task: &TaskSpec, action: Option<&HighLevelAction>) -> (HouseState, StepOutcome) {
    let mut next = state.clone();
    let feedback = match action {
        None => Feedback::parse_error(),
        Some(a) => match apply(&mut next, a) {
            Ok(()) => Feedback::ok(EnvKind::High),
            Err(fb) => {
                next = state.clone();
                fb
            }
        },
    };
    next.step += 1;
    let mut subgoal_events = Vec::new();
    for p in &task.subgoals {
        if !next.achieved.contains(p) && next.holds(p) {
            next.achieved.insert(p.clone());
            subgoal_events.push(p.clone());
        }
    }
    let success = check_goal(&next, task);
    let done = success || next.step >= next.horizon;
    next.last_feedback = Some(feedback.clone());
    (next, StepOutcome { feedback, done, success, subgoal_events })
}

fn invalid(code: FeedbackCode, reason: String) -> Feedback {
    Feedback::invalid(code, reason)
}

fn apply(s: &mut HouseState, a: &HighLevelAction) -> Result<(), Feedback> {
    let target = a.target.as_deref();
    if a.skill.takes_target() {
        let t = target.ok_or_else(|| invalid(FeedbackCode::UnknownTarget, "The action has no target".into()))?;
        if !s.exists(t) {
            return Err(invalid(FeedbackCode::UnknownTarget, format!("There is no {t} in the scene")));
        }
    }
    let t = target.unwrap_or_default();
    let not_near = |t: &str| invalid(FeedbackCode::NotNear, format!("Robot is not close to the {t}"));
    match a.skill {
        Skill::Find => {
            s.agent.at = Some(t.to_string());
        }
        Skill::PickUp => {
            if let Some(h) = &s.agent.holding {
                return Err(invalid(FeedbackCode::Holding, format!("Robot is currently holding {h}")));
            }
            let pickable = s.objects.get(t).map(|o| !o.fixture).unwrap_or(false);
            if !pickable {
                return Err(invalid(FeedbackCode::NotPickable, format!("The {t} cannot be picked up")));
            }
            if !s.near(t) {
                return Err(not_near(t));
            }
            if let Some(r) = s.enclosing_closed(t) {
                return Err(invalid(FeedbackCode::InsideClosed, format!("The {t} is inside the closed {r}")));
            }
            let o = s.objects.get_mut(t).unwrap();
            let from = o.location.take();
            s.agent.holding = Some(t.to_string());
            s.agent.at = from;
        }
        Skill::PutDown => {
            let Some(h) = s.agent.holding.clone() else {
                return Err(invalid(FeedbackCode::NotHolding, "Robot is not holding any object".into()));
            };
            let Some(r) = s.current_receptacle().map(str::to_string) else {
                return Err(invalid(FeedbackCode::NotNear, "Robot is not close to any receptacle".into()));
            };
            if !s.receptacles[&r].open {
                return Err(invalid(FeedbackCode::ReceptacleClosed, format!("The {r} is closed")));
            }
            s.objects.get_mut(&h).unwrap().location = Some(r);
            s.agent.holding = None;
        }
        Skill::Drop => {
            let Some(h) = s.agent.holding.take() else {
                return Err(invalid(FeedbackCode::NotHolding, "Robot is not holding any object".into()));
            };
            s.objects.get_mut(&h).unwrap().location = Some("Floor".into());
        }
        Skill::Open | Skill::Close => {
            let openable = s.receptacles.get(t).map(|r| r.openable).unwrap_or(false);
            if !openable {
                return Err(invalid(FeedbackCode::NotOpenable, format!("The {t} cannot be opened or closed")));
            }
            if !s.near(t) {
                return Err(not_near(t));
            }
            let want_open = a.skill == Skill::Open;
            let r = s.receptacles.get_mut(t).unwrap();
            if r.open == want_open {
                let (code, word) =
                    if want_open { (FeedbackCode::AlreadyOpen, "open") } else { (FeedbackCode::AlreadyClosed, "closed") };
                return Err(invalid(code, format!("The {t} is already {word}")));
            }
            r.open = want_open;
            if !want_open && t == "Fridge" {
                for o in s.contents("Fridge").into_iter().map(str::to_string).collect::<Vec<_>>() {
                    let o = s.objects.get_mut(&o).unwrap();
                    o.cold = true;
                    o.hot = false;
                }
            }
        }
        Skill::TurnOn | Skill::TurnOff => {
            let Some(cur) = s.is_on(t) else {
                return Err(invalid(FeedbackCode::NotToggleable, format!("The {t} cannot be turned on or off")));
            };
            if !s.near(t) {
                return Err(not_near(t));
            }
            let want_on = a.skill == Skill::TurnOn;
            if cur == want_on {
                let (code, word) = if want_on { (FeedbackCode::AlreadyOn, "on") } else { (FeedbackCode::AlreadyOff, "off") };
                return Err(invalid(code, format!("The {t} is already {word}")));
            }
            s.set_on(t, want_on);
            if want_on {
                let (vessel, effect): (String, fn(&mut ObjectState)) = match t {
                    "Faucet" => (s.objects[t].location.clone().unwrap_or_default(), |o| o.clean = true),
                    "Microwave" if !s.receptacles[t].open => ("Microwave".into(), |o| {
                        o.hot = true;
                        o.cold = false;
                    }),
                    _ => (String::new(), |_| {}),
                };
                for o in s.contents(&vessel).into_iter().map(str::to_string).collect::<Vec<_>>() {
                    let o = s.objects.get_mut(&o).unwrap();
                    if !o.fixture {
                        effect(o);
                    }
                }
            }
        }
        Skill::Slice => {
            if !s.objects.contains_key(t) || !catalog::is_sliceable(t) {
                return Err(invalid(FeedbackCode::NotSliceable, format!("The {t} cannot be sliced")));
            }
            if !s.near(t) {
                return Err(not_near(t));
            }
            s.objects.get_mut(t).unwrap().sliced = true;
        }
    }
    Ok(())
}

fn object_props(o: &ObjectState) -> Vec<Property> {
    let mut p = Vec::new();
    match o.on {
        Some(true) => p.push(Property::On),
        Some(false) => p.push(Property::Off),
        None => {}
    }
    if o.clean {
        p.push(Property::Clean);
    }
    if o.hot {
        p.push(Property::Hot);
    }
    if o.cold {
        p.push(Property::Cold);
    }
    if o.sliced {
        p.push(Property::Sliced);
    }
    p
}

fn receptacle_props(r: &ReceptacleState) -> Vec<Property> {
    let mut p = Vec::new();
    if r.openable {
        p.push(if r.open { Property::Open } else { Property::Closed });
    }
    match r.on {
        Some(true) => p.push(Property::On),
        Some(false) => p.push(Property::Off),
        None => {}
    }
    p
}

fn describe(name: &str, props: &[Property]) -> String {
    if props.is_empty() {
        name.to_string()
    } else {
        let words: Vec<&str> = props.iter().map(|p| p.surface().trim_start_matches("p:")).collect();
        format!("{name} ({})", words.join(", "))
    }
}

/// Local view: where the agent is, what it holds, and what is visible at the
/// current receptacle (contents of closed receptacles are hidden).
pub fn render_observation(state: &HouseState) -> Observation {
    let v = vocab();
    let none = v.special(Special::None);
    let name_tok = |n: &str| v.name(n).unwrap_or_else(|| v.special(Special::Unk));
    let mut tokens = vec![v.marker(Marker::Obs)];
    tokens.push(state.agent.at.as_deref().map(name_tok).unwrap_or(none));
    tokens.push(v.marker(Marker::Grip));
    let mut text = format!("You are at: {}.", state.agent.at.as_deref().unwrap_or("nothing"));
    match state.agent.holding.as_deref() {
        Some(h) => {
            tokens.push(name_tok(h));
            let props = object_props(&state.objects[h]);
            tokens.extend(props.iter().map(|p| v.property(*p)));
            text.push_str(&format!(" Holding: {}.", describe(h, &props)));
        }
        None => {
            tokens.push(none);
            text.push_str(" Holding: nothing.");
        }
    }
    let mut visible = Vec::new();
    if let Some(r) = state.current_receptacle() {
        let rs = &state.receptacles[r];
        let props = receptacle_props(rs);
        tokens.push(name_tok(r));
        tokens.extend(props.iter().map(|p| v.property(*p)));
        visible.push(describe(r, &props));
        if rs.open {
            for o in state.contents(r) {
                let props = object_props(&state.objects[o]);
                tokens.push(name_tok(o));
                tokens.extend(props.iter().map(|p| v.property(*p)));
                visible.push(describe(o, &props));
            }
        }
    }
    if !visible.is_empty() {
        text.push_str(&format!(" Visible: {}.", visible.join(", ")));
    }
    if let Some(fb) = &state.last_feedback {
        tokens.push(v.marker(Marker::Fb));
        tokens.push(v.feedback(fb.code));
        text.push(' ');
        text.push_str(&fb.text);
    }
    Observation { tokens, text }
}

/// A MiniHouse episode: task plus evolving state.
#[derive(Debug, Clone)]
pub struct MiniHouse {
    pub task: TaskSpec,
    pub state: HouseState,
}

impl MiniHouse {
    pub fn new(task: TaskSpec, seed: u64) -> Result<Self, UnknownTask> {
        let (state, _) = reset(&task, seed)?;
        Ok(MiniHouse { task, state })
    }

    pub fn observe(&self) -> Observation {
        render_observation(&self.state)
    }

    pub fn step(&mut self, action: Option<&HighLevelAction>) -> StepOutcome {
        let (next, out) = step(&self.state, &self.task, action);
        self.state = next;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Split;

    fn task() -> TaskSpec {
        TaskSpec::new(TaskTemplate::PickPlace, "Plate", Some("Fridge"), 0, 3).unwrap()
    }

    #[test]
    fn reset_is_deterministic_and_starts_at_step_zero() {
        let t = task();
        let (a, oa) = reset(&t, 7).unwrap();
        let (b, ob) = reset(&t, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert_eq!(a.step, 0);
        assert!(!check_goal(&a, &t));
        assert!(a.receptacles.values().all(|r| r.open != r.openable));
    }

    #[test]
    fn pick_up_while_holding_plate_is_invalid() {
        let t = task();
        let (s, _) = reset(&t, 0).unwrap();
        let (s, o) = step(&s, &t, Some(&HighLevelAction::find("Plate")));
        assert!(o.feedback.valid);
        assert_eq!(o.feedback.text, "Last action executed successfully.");
        assert_eq!(s.agent.at.as_deref(), Some("Plate"));
        let (s, o) = step(&s, &t, Some(&HighLevelAction::pick_up("Plate")));
        assert!(o.feedback.valid);
        let other = s.objects.keys().find(|k| !s.objects[*k].fixture && *k != "Plate").unwrap().clone();
        let (s2, _) = step(&s, &t, Some(&HighLevelAction::find(other.clone())));
        let (s3, o) = step(&s2, &t, Some(&HighLevelAction::pick_up(other)));
        assert_eq!(o.feedback.text, "Last action is invalid. Robot is currently holding Plate");
        assert!(!o.feedback.valid);
        assert_eq!(s3.objects, s2.objects);
        assert_eq!(s3.agent, s2.agent);
        assert_eq!(s3.step, s2.step + 1);
    }

    #[test]
    fn open_twice_is_invalid() {
        let t = task();
        let (s, _) = reset(&t, 0).unwrap();
        let (s, _) = step(&s, &t, Some(&HighLevelAction::find("Fridge")));
        let (s, o) = step(&s, &t, Some(&HighLevelAction::open("Fridge")));
        assert!(o.feedback.valid);
        let (_, o) = step(&s, &t, Some(&HighLevelAction::open("Fridge")));
        assert_eq!(o.feedback.code, FeedbackCode::AlreadyOpen);
    }

    #[test]
    fn closed_receptacles_hide_contents() {
        let t = task();
        let (mut s, _) = reset(&t, 0).unwrap();
        s.objects.get_mut("Plate").unwrap().location = Some("Fridge".into());
        s.agent.at = Some("Fridge".into());
        let plate = vocab().name("Plate").unwrap();
        assert!(!render_observation(&s).tokens.contains(&plate));
        s.receptacles.get_mut("Fridge").unwrap().open = true;
        assert!(render_observation(&s).tokens.contains(&plate));
    }

    #[test]
    fn find_reveals_target_in_listing() {
        let t = task();
        let (s, _) = reset(&t, 0).unwrap();
        let (s, _) = step(&s, &t, Some(&HighLevelAction::find("Plate")));
        assert!(render_observation(&s).tokens.contains(&vocab().name("Plate").unwrap()));
        assert_eq!(t.split, if super::super::task::combo_is_unseen(t.template, "Plate", Some("Fridge")) { Split::Unseen } else { Split::Seen });
    }

    #[test]
    fn parse_failure_only_advances_step() {
        let t = task();
        let (s, _) = reset(&t, 0).unwrap();
        let (n, o) = step(&s, &t, None);
        assert_eq!(o.feedback.text, "Last action is invalid. The action could not be parsed");
        assert_eq!(n.step, 1);
        assert_eq!(n.objects, s.objects);
    }
}
