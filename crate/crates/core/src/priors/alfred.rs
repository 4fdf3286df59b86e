//! ALFRED-style macro actions and their expansion into MiniHouse skill phrases.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_high::catalog;
use crate::env_high::{reset, step, HighLevelAction, HouseState, TaskSpec, TaskTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlfredAction {
    GotoLocation(String),
    PickupObject(String),
    SliceObject(String),
    ToggleObject(String),
    NoOp,
    PutObject(String, String),
    CleanObject(String),
    CoolObject(String),
    HeatObject(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown ALFRED action {0:?}")]
pub struct UnknownAction(pub String);

impl fmt::Display for AlfredAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlfredAction::GotoLocation(l) => write!(f, "GotoLocation({l})"),
            AlfredAction::PickupObject(o) => write!(f, "PickupObject({o})"),
            AlfredAction::SliceObject(o) => write!(f, "SliceObject({o})"),
            AlfredAction::ToggleObject(o) => write!(f, "ToggleObject({o})"),
            AlfredAction::NoOp => write!(f, "NoOp()"),
            AlfredAction::PutObject(o, l) => write!(f, "PutObject({o}, {l})"),
            AlfredAction::CleanObject(o) => write!(f, "CleanObject({o})"),
            AlfredAction::CoolObject(o) => write!(f, "CoolObject({o})"),
            AlfredAction::HeatObject(o) => write!(f, "HeatObject({o})"),
        }
    }
}

impl FromStr for AlfredAction {
    type Err = UnknownAction;

    /// Parses `Name(arg[, arg])`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UnknownAction(s.to_string());
        let (name, rest) = s.trim().split_once('(').ok_or_else(bad)?;
        let args: Vec<String> = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .split(',')
            .map(|a| a.trim().to_string())
            .filter(|a| !a.is_empty())
            .collect();
        let one = || match args.as_slice() {
            [a] => Ok(a.clone()),
            _ => Err(bad()),
        };
        Ok(match name {
            "GotoLocation" => AlfredAction::GotoLocation(one()?),
            "PickupObject" => AlfredAction::PickupObject(one()?),
            "SliceObject" => AlfredAction::SliceObject(one()?),
            "ToggleObject" => AlfredAction::ToggleObject(one()?),
            "CleanObject" => AlfredAction::CleanObject(one()?),
            "CoolObject" => AlfredAction::CoolObject(one()?),
            "HeatObject" => AlfredAction::HeatObject(one()?),
            "NoOp" if args.is_empty() => AlfredAction::NoOp,
            "PutObject" => match args.as_slice() {
                [o, l] => AlfredAction::PutObject(o.clone(), l.clone()),
                _ => return Err(bad()),
            },
            _ => return Err(bad()),
        })
    }
}

/// World facts the expansion depends on. `closed` lists receptacles that
/// must be opened before use; `toggled_on` tracks alternating toggles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlfredContext {
    pub closed: BTreeSet<String>,
    pub toggled_on: BTreeSet<String>,
}

impl AlfredContext {
    pub fn from_state(s: &HouseState) -> Self {
        let closed = s.receptacles.iter().filter(|(_, r)| r.openable && !r.open).map(|(n, _)| n.clone()).collect();
        let on_objects = s.objects.iter().filter(|(_, o)| o.on == Some(true)).map(|(n, _)| n.clone());
        let on_recs = s.receptacles.iter().filter(|(_, r)| r.on == Some(true)).map(|(n, _)| n.clone());
        AlfredContext { closed, toggled_on: on_objects.chain(on_recs).collect() }
    }
}

const PUT: &str = "put down the object in hand";

/// Expands one macro action into skill phrases and updates `ctx` with the
/// effects of the expansion.
pub fn map_alfred_action(action: &AlfredAction, ctx: &mut AlfredContext) -> Vec<String> {
    match action {
        AlfredAction::GotoLocation(l) => vec![format!("find a {l}")],
        AlfredAction::PickupObject(o) => vec![format!("pick up the {o}")],
        AlfredAction::SliceObject(o) => vec![format!("slice the {o}")],
        AlfredAction::ToggleObject(o) => {
            if ctx.toggled_on.remove(o) {
                vec![format!("turn off the {o}")]
            } else {
                ctx.toggled_on.insert(o.clone());
                vec![format!("turn on the {o}")]
            }
        }
        AlfredAction::NoOp => Vec::new(),
        AlfredAction::PutObject(_, l) => {
            if ctx.closed.remove(l) {
                vec![format!("open the {l}"), PUT.to_string()]
            } else {
                vec![PUT.to_string()]
            }
        }
        AlfredAction::CleanObject(o) => vec![
            PUT.into(),
            "find a Faucet".into(),
            "turn on the Faucet".into(),
            "turn off the Faucet".into(),
            format!("find a {o}"),
            format!("pick up the {o}"),
        ],
        AlfredAction::CoolObject(o) => {
            ctx.closed.insert("Fridge".into());
            vec![
                "open the Fridge".into(),
                PUT.into(),
                "close the Fridge".into(),
                "open the Fridge".into(),
                format!("find a {o}"),
                format!("pick up the {o}"),
                "close the Fridge".into(),
            ]
        }
        AlfredAction::HeatObject(o) => {
            ctx.closed.insert("Microwave".into());
            vec![
                "open the Microwave".into(),
                PUT.into(),
                "close the Microwave".into(),
                "turn on the Microwave".into(),
                "turn off the Microwave".into(),
                "open the Microwave".into(),
                format!("find a {o}"),
                format!("pick up the {o}"),
                "close the Microwave".into(),
            ]
        }
    }
}

/// Parses `text` and expands it.
pub fn map_alfred_text(text: &str, ctx: &mut AlfredContext) -> Result<Vec<String>, UnknownAction> {
    Ok(map_alfred_action(&text.parse()?, ctx))
}

/// Expands a whole macro plan.
pub fn map_alfred_plan(plan: &[AlfredAction], ctx: &mut AlfredContext) -> Vec<String> {
    plan.iter().flat_map(|a| map_alfred_action(a, ctx)).collect()
}

/// Macro plan in ALFRED style for a MiniHouse task from its initial state.
pub fn alfred_plan(task: &TaskSpec, state: &HouseState) -> Vec<AlfredAction> {
    use AlfredAction::*;
    let o = task.object.clone();
    let loc = |x: &str| state.objects.get(x).and_then(|s| s.location.clone()).unwrap_or_default();
    let dest = task.destination.clone().unwrap_or_default();
    let fetch = |x: &str| vec![GotoLocation(loc(x)), PickupObject(x.to_string())];
    let deliver = |x: &str| vec![GotoLocation(dest.clone()), PutObject(x.to_string(), dest.clone())];
    let mut p = Vec::new();
    match task.template {
        TaskTemplate::PickPlace => {
            if catalog::is_sliceable(&o) {
                p.push(GotoLocation(loc(&o)));
                p.push(SliceObject(o.clone()));
            }
            p.extend(fetch(&o));
            p.extend(deliver(&o));
        }
        TaskTemplate::PickTwo => {
            let o2 = format!("{o}_2");
            p.extend(fetch(&o));
            p.extend(deliver(&o));
            p.push(NoOp);
            p.extend(fetch(&o2));
            p.extend(deliver(&o2));
        }
        TaskTemplate::Clean | TaskTemplate::Heat | TaskTemplate::Cool => {
            p.extend(fetch(&o));
            let (at, treat) = match task.template {
                TaskTemplate::Clean => ("SinkBasin", CleanObject(o.clone())),
                TaskTemplate::Heat => ("Microwave", HeatObject(o.clone())),
                _ => ("Fridge", CoolObject(o.clone())),
            };
            p.push(GotoLocation(at.into()));
            p.push(treat);
            p.extend(deliver(&o));
        }
        TaskTemplate::Examine => {
            p.extend(fetch(&o));
            p.push(GotoLocation("Desk".into()));
            p.push(ToggleObject("DeskLamp".into()));
        }
        TaskTemplate::PlaceIn => {}
    }
    p
}

/// Result of executing a mapped plan in MiniHouse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappedExecution {
    pub actions: Vec<String>,
    /// `(index, phrase, feedback)` for every rejected action.
    pub invalid: Vec<(usize, String, String)>,
    pub goal_reached: bool,
}

impl MappedExecution {
    pub fn all_valid(&self) -> bool {
        self.invalid.is_empty()
    }
}

/// Maps the task's macro plan and runs it from `reset(task, seed)`.
pub fn execute_mapped(task: &TaskSpec, seed: u64) -> MappedExecution {
    let Ok((mut s, _)) = reset(task, seed) else {
        return MappedExecution { actions: Vec::new(), invalid: vec![(0, String::new(), "reset failed".into())], goal_reached: false };
    };
    let plan = alfred_plan(task, &s);
    let mut ctx = AlfredContext::from_state(&s);
    let actions = map_alfred_plan(&plan, &mut ctx);
    let mut invalid = Vec::new();
    let mut goal_reached = false;
    for (i, a) in actions.iter().enumerate() {
        let parsed = HighLevelAction::parse_phrase(a);
        let (next, out) = step(&s, task, parsed.as_ref());
        if !out.feedback.valid {
            invalid.push((i, a.clone(), out.feedback.text.clone()));
        }
        goal_reached |= out.success;
        s = next;
    }
    MappedExecution { actions, invalid, goal_reached }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_high::all_combos;

    fn map(a: &str) -> Vec<String> {
        map_alfred_text(a, &mut AlfredContext::default()).unwrap()
    }

    #[test]
    fn simple_rows() {
        assert_eq!(map("GotoLocation(Fridge)"), ["find a Fridge"]);
        assert_eq!(map("PickupObject(Apple)"), ["pick up the Apple"]);
        assert_eq!(map("SliceObject(Bread)"), ["slice the Bread"]);
        assert!(map("NoOp()").is_empty());
    }

    #[test]
    fn clean_row_is_six_actions() {
        assert_eq!(
            map("CleanObject(soapbar)"),
            [
                "put down the object in hand",
                "find a Faucet",
                "turn on the Faucet",
                "turn off the Faucet",
                "find a soapbar",
                "pick up the soapbar"
            ]
        );
    }

    #[test]
    fn heat_and_cool_rows() {
        let h = map("HeatObject(Potato)");
        assert_eq!(h.len(), 9);
        assert_eq!(h[3], "turn on the Microwave");
        assert_eq!(h[8], "close the Microwave");
        let c = map("CoolObject(Egg)");
        assert_eq!(
            c,
            [
                "open the Fridge",
                "put down the object in hand",
                "close the Fridge",
                "open the Fridge",
                "find a Egg",
                "pick up the Egg",
                "close the Fridge"
            ]
        );
    }

    #[test]
    fn put_object_depends_on_closed_receptacle() {
        let mut ctx = AlfredContext { closed: ["Fridge".to_string()].into(), ..Default::default() };
        let put = AlfredAction::PutObject("Apple".into(), "Fridge".into());
        assert_eq!(map_alfred_action(&put, &mut ctx), ["open the Fridge", "put down the object in hand"]);
        assert_eq!(map_alfred_action(&put, &mut ctx), ["put down the object in hand"]);
        let shelf = AlfredAction::PutObject("Apple".into(), "Shelf".into());
        assert_eq!(map_alfred_action(&shelf, &mut AlfredContext::default()), ["put down the object in hand"]);
    }

    #[test]
    fn toggle_alternates() {
        let mut ctx = AlfredContext::default();
        let t = AlfredAction::ToggleObject("DeskLamp".into());
        assert_eq!(map_alfred_action(&t, &mut ctx), ["turn on the DeskLamp"]);
        assert_eq!(map_alfred_action(&t, &mut ctx), ["turn off the DeskLamp"]);
        assert_eq!(map_alfred_action(&t, &mut ctx), ["turn on the DeskLamp"]);
    }

    #[test]
    fn unknown_actions_are_rejected() {
        assert!("LookAt(Book)".parse::<AlfredAction>().is_err());
        assert!("PutObject(Apple)".parse::<AlfredAction>().is_err());
        assert!("GotoLocation".parse::<AlfredAction>().is_err());
        let a: AlfredAction = "PutObject(Apple, Fridge)".parse().unwrap();
        assert_eq!(a.to_string().parse::<AlfredAction>().unwrap(), a);
    }

    #[test]
    fn mapped_plans_execute_cleanly_for_every_combo() {
        for (i, (t, o, d)) in all_combos().into_iter().enumerate() {
            let task = TaskSpec::new(t, o, d, 0, i as u64).unwrap();
            let ex = execute_mapped(&task, i as u64);
            assert!(ex.all_valid(), "{task:?}: {:?}", ex.invalid);
            assert!(ex.goal_reached, "{task:?}");
        }
    }
}
