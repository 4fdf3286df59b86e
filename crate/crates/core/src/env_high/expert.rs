//! Scripted expert for MiniHouse tasks.

use thiserror::Error;

use super::state::{step, HouseState};
use super::task::{Predicate, TaskSpec, TaskTemplate};
use super::HighLevelAction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("task cannot be solved from this state: {0}")]
pub struct Unsolvable(pub String);

struct Planner<'a> {
    task: &'a TaskSpec,
    state: HouseState,
    plan: Vec<HighLevelAction>,
    done: bool,
}

impl Planner<'_> {
    fn act(&mut self, a: HighLevelAction) -> Result<(), Unsolvable> {
        if self.done {
            return Ok(());
        }
        let (next, out) = step(&self.state, self.task, Some(&a));
        if !out.feedback.valid {
            return Err(Unsolvable(format!("{a}: {}", out.feedback.text)));
        }
        self.done = out.success;
        self.state = next;
        self.plan.push(a);
        Ok(())
    }

    fn is_open(&self, r: &str) -> bool {
        self.state.receptacles.get(r).map(|r| r.open).unwrap_or(false)
    }

    fn free_hands(&mut self) -> Result<(), Unsolvable> {
        if self.state.agent.holding.is_some() {
            match self.state.current_receptacle() {
                Some(r) if self.is_open(r) => self.act(HighLevelAction::put_down())?,
                _ => self.act(HighLevelAction::drop_held())?,
            }
        }
        Ok(())
    }

    fn fetch(&mut self, o: &str) -> Result<(), Unsolvable> {
        if self.state.agent.holding.as_deref() == Some(o) {
            return Ok(());
        }
        self.free_hands()?;
        let loc = self.state.objects.get(o).and_then(|x| x.location.clone()).ok_or_else(|| Unsolvable(format!("no {o}")))?;
        // Finding the object first reveals its closed container in the
        // observation, so every step is decidable from what the agent sees.
        self.act(HighLevelAction::find(o))?;
        if !self.is_open(&loc) {
            self.act(HighLevelAction::open(loc))?;
        }
        self.act(HighLevelAction::pick_up(o))
    }

    fn place(&mut self, o: &str, d: &str) -> Result<(), Unsolvable> {
        if self.state.holds(&Predicate::Inside(o.into(), d.into())) {
            return Ok(());
        }
        self.fetch(o)?;
        self.act(HighLevelAction::find(d))?;
        if !self.is_open(d) {
            self.act(HighLevelAction::open(d))?;
        }
        self.act(HighLevelAction::put_down())
    }

    /// Put the held object into an appliance, run it, and take the object back.
    fn treat(&mut self, o: &str, appliance: &str) -> Result<(), Unsolvable> {
        self.fetch(o)?;
        self.act(HighLevelAction::find(appliance))?;
        match appliance {
            "SinkBasin" => {
                self.act(HighLevelAction::put_down())?;
                self.act(HighLevelAction::find("Faucet"))?;
                self.act(HighLevelAction::turn_on("Faucet"))?;
                self.act(HighLevelAction::turn_off("Faucet"))?;
            }
            "Microwave" => {
                if !self.is_open("Microwave") {
                    self.act(HighLevelAction::open("Microwave"))?;
                }
                self.act(HighLevelAction::put_down())?;
                self.act(HighLevelAction::close("Microwave"))?;
                self.act(HighLevelAction::turn_on("Microwave"))?;
                self.act(HighLevelAction::turn_off("Microwave"))?;
                self.act(HighLevelAction::open("Microwave"))?;
            }
            "Fridge" => {
                if !self.is_open("Fridge") {
                    self.act(HighLevelAction::open("Fridge"))?;
                }
                self.act(HighLevelAction::put_down())?;
                self.act(HighLevelAction::close("Fridge"))?;
                self.act(HighLevelAction::open("Fridge"))?;
            }
            _ => return Err(Unsolvable(format!("no treatment at {appliance}"))),
        }
        self.act(HighLevelAction::find(o))?;
        self.act(HighLevelAction::pick_up(o))?;
        if appliance != "SinkBasin" {
            self.act(HighLevelAction::close(appliance))?;
        }
        Ok(())
    }
}

/// Valid action sequence that reaches the goal from `state`. Appliance
/// subsequences follow the ALFRED-to-skill orderings used for data mapping.
pub fn expert_plan_high(task: &TaskSpec, state: &HouseState) -> Result<Vec<HighLevelAction>, Unsolvable> {
    let mut p = Planner { task, state: state.clone(), plan: Vec::new(), done: false };
    let o = task.object.as_str();
    let dest = task.destination.as_deref();
    let need_dest = || dest.ok_or_else(|| Unsolvable("missing destination".into()));
    match task.template {
        TaskTemplate::PickPlace => p.place(o, need_dest()?)?,
        TaskTemplate::PickTwo => {
            let d = need_dest()?;
            p.place(o, d)?;
            p.place(&format!("{o}_2"), d)?;
        }
        TaskTemplate::Clean | TaskTemplate::Heat | TaskTemplate::Cool => {
            let (pred, appliance) = match task.template {
                TaskTemplate::Clean => (Predicate::IsClean(o.into()), "SinkBasin"),
                TaskTemplate::Heat => (Predicate::IsHot(o.into()), "Microwave"),
                _ => (Predicate::IsCool(o.into()), "Fridge"),
            };
            if !p.state.holds(&pred) {
                p.treat(o, appliance)?;
            }
            p.place(o, need_dest()?)?;
        }
        TaskTemplate::Examine => {
            p.fetch(o)?;
            if !p.state.holds(&Predicate::IsOn("DeskLamp".into())) {
                p.act(HighLevelAction::find("DeskLamp"))?;
                p.act(HighLevelAction::turn_on("DeskLamp"))?;
            }
        }
        TaskTemplate::PlaceIn => return Err(Unsolvable("place_in is a MiniTable template".into())),
    }
    if p.plan.len() as u32 > task.horizon {
        return Err(Unsolvable(format!("plan of {} steps exceeds horizon {}", p.plan.len(), task.horizon)));
    }
    Ok(p.plan)
}
