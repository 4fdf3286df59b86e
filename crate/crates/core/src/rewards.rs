//! Per-turn composite reward: success + subgoal + behavior.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_high::Predicate;
use crate::env_low::palette::{Color, Shape};
use crate::env_low::{ground_truth_scene, TableState};
use crate::response::{ParseFailure, StructuredResponse};
use crate::types::{EnvKind, Feedback, RewardBreakdown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub success_high: f64,
    pub success_low: f64,
    pub subgoal_unit: f64,
    pub invalid_penalty: f64,
    pub desc_bonus: f64,
    pub desc_penalty: f64,
    pub q_hi: f64,
    pub q_lo: f64,
    /// Gripper-to-object distance (workspace units) that counts as an approach.
    pub approach_radius: f64,
    pub use_subgoal: bool,
    pub use_behavior: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            success_high: 4.0,
            success_low: 3.0,
            subgoal_unit: 1.0,
            invalid_penalty: -0.5,
            desc_bonus: 0.5,
            desc_penalty: -0.5,
            q_hi: 0.75,
            q_lo: 0.25,
            approach_radius: 20.0,
            use_subgoal: true,
            use_behavior: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardConfigError {
    #[error("q_lo ({lo}) must be below q_hi ({hi})")]
    Thresholds { lo: f64, hi: f64 },
    #[error("reward value {0} is not finite")]
    NonFinite(&'static str),
}

impl RewardConfig {
    /// Success reward only.
    pub fn outcome_only() -> Self {
        RewardConfig { use_subgoal: false, use_behavior: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), RewardConfigError> {
        let fields = [
            ("success_high", self.success_high),
            ("success_low", self.success_low),
            ("subgoal_unit", self.subgoal_unit),
            ("invalid_penalty", self.invalid_penalty),
            ("desc_bonus", self.desc_bonus),
            ("desc_penalty", self.desc_penalty),
            ("q_hi", self.q_hi),
            ("q_lo", self.q_lo),
            ("approach_radius", self.approach_radius),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(RewardConfigError::NonFinite(name));
        }
        if self.q_lo >= self.q_hi {
            return Err(RewardConfigError::Thresholds { lo: self.q_lo, hi: self.q_hi });
        }
        Ok(())
    }
}

/// Subgoals already rewarded in the current episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalLedger {
    pub granted: BTreeSet<String>,
}

impl SubgoalLedger {
    pub fn len(&self) -> usize {
        self.granted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.granted.is_empty()
    }
}

pub fn success_reward(done_success: bool, env: EnvKind, cfg: &RewardConfig) -> f64 {
    match (done_success, env) {
        (false, _) => 0.0,
        (true, EnvKind::High) => cfg.success_high,
        (true, EnvKind::Low) => cfg.success_low,
    }
}

pub fn subgoal_reward_high(events: &[Predicate], ledger: &mut SubgoalLedger, cfg: &RewardConfig) -> f64 {
    let fresh = events.iter().filter(|p| ledger.granted.insert(p.to_string())).count();
    fresh as f64 * cfg.subgoal_unit
}

/// +unit for each target the gripper comes within `approach_radius` of for
/// the first time.
pub fn subgoal_reward_low(state: &TableState, targets: &[String], ledger: &mut SubgoalLedger, cfg: &RewardConfig) -> f64 {
    let mut r = 0.0;
    for t in targets {
        if ledger.granted.contains(t) {
            continue;
        }
        if state.gripper_distance(t).is_some_and(|d| d <= cfg.approach_radius) {
            ledger.granted.insert(t.clone());
            r += cfg.subgoal_unit;
        }
    }
    r
}

pub fn behavior_reward_high(feedback: &Feedback, cfg: &RewardConfig) -> f64 {
    if feedback.valid {
        0.0
    } else {
        cfg.invalid_penalty
    }
}

/// Positional agreement over the shorter list, divided by the truth length.
pub fn matching_ratio(predicted: &[(Color, Shape)], truth: &[(Color, Shape)]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

pub fn behavior_reward_low(q: f64, cfg: &RewardConfig) -> f64 {
    if q > cfg.q_hi {
        cfg.desc_bonus
    } else if q < cfg.q_lo {
        cfg.desc_penalty
    } else {
        0.0
    }
}

pub fn total_reward(success: f64, subgoal: f64, behavior: f64) -> RewardBreakdown {
    RewardBreakdown::new(success, subgoal, behavior)
}

/// Reward for one MiniHouse turn.
pub fn turn_reward_high(
    success: bool,
    events: &[Predicate],
    feedback: &Feedback,
    ledger: &mut SubgoalLedger,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let s = success_reward(success, EnvKind::High, cfg);
    // The ledger is updated even when the term is off so that subgoal
    // progress can still be reported.
    let g = subgoal_reward_high(events, ledger, cfg);
    let g = if cfg.use_subgoal { g } else { 0.0 };
    let b = if cfg.use_behavior { behavior_reward_high(feedback, cfg) } else { 0.0 };
    total_reward(s, g, b)
}

/// q for a parsed (or unparsable) low-level response against the scene.
pub fn response_q(parsed: &Result<StructuredResponse, ParseFailure>, state: &TableState) -> f64 {
    let truth: Vec<(Color, Shape)> = ground_truth_scene(state).into_iter().map(|(c, s, _)| (c, s)).collect();
    match parsed {
        Ok(r) => {
            let pred: Vec<(Color, Shape)> = r.visual.iter().map(|e| (e.color, e.shape)).collect();
            matching_ratio(&pred, &truth)
        }
        Err(_) => 0.0,
    }
}

/// Reward for one MiniTable turn. `before` is the scene the response
/// described; `after` is the state the action produced. Returns the
/// breakdown and q.
pub fn turn_reward_low(
    parsed: &Result<StructuredResponse, ParseFailure>,
    before: &TableState,
    after: &TableState,
    success: bool,
    targets: &[String],
    ledger: &mut SubgoalLedger,
    cfg: &RewardConfig,
) -> (RewardBreakdown, f64) {
    let q = response_q(parsed, before);
    let s = success_reward(success, EnvKind::Low, cfg);
    let g = subgoal_reward_low(after, targets, ledger, cfg);
    let g = if cfg.use_subgoal { g } else { 0.0 };
    let b = if cfg.use_behavior {
        let parse_penalty = if parsed.is_err() { cfg.invalid_penalty } else { 0.0 };
        behavior_reward_low(q, cfg) + parse_penalty
    } else {
        0.0
    };
    (total_reward(s, g, b), q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_low::{reset_low, ManipTask};
    use crate::types::FeedbackCode;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    #[test]
    fn table_values() {
        let c = cfg();
        assert_eq!(success_reward(true, EnvKind::High, &c), 4.0);
        assert_eq!(success_reward(true, EnvKind::Low, &c), 3.0);
        assert_eq!(success_reward(false, EnvKind::High, &c), 0.0);
        let bad = Feedback::invalid(FeedbackCode::Holding, "Robot is currently holding Plate");
        assert_eq!(behavior_reward_high(&bad, &c), -0.5);
        assert_eq!(behavior_reward_high(&Feedback::ok(EnvKind::High), &c), 0.0);
        assert_eq!(behavior_reward_high(&Feedback::parse_error(), &c), -0.5);
        assert_eq!(behavior_reward_low(0.8, &c), 0.5);
        assert_eq!(behavior_reward_low(0.2, &c), -0.5);
        assert_eq!(behavior_reward_low(0.5, &c), 0.0);
        assert_eq!(behavior_reward_low(0.75, &c), 0.0);
        assert_eq!(behavior_reward_low(0.25, &c), 0.0);
        assert_eq!(c.approach_radius, 20.0);
    }

    #[test]
    fn subgoals_are_first_time_only() {
        let c = cfg();
        let mut l = SubgoalLedger::default();
        let washed = Predicate::IsClean("Apple".into());
        assert_eq!(subgoal_reward_high(&[washed.clone()], &mut l, &c), 1.0);
        assert_eq!(subgoal_reward_high(&[washed], &mut l, &c), 0.0);
        let two = [Predicate::Holding("Mug".into()), Predicate::IsHot("Mug".into())];
        assert_eq!(subgoal_reward_high(&two, &mut l, &c), 2.0);
    }

    #[test]
    fn approach_radius_threshold() {
        let c = cfg();
        let task = ManipTask::new(Color::Red, Shape::Star, Color::Blue, 0, 0).unwrap();
        let (mut s, _) = reset_low(&task, 0).unwrap();
        let star = s.object(&task.target_name()).unwrap().coord;
        let targets = vec![task.target_name()];
        let mut l = SubgoalLedger::default();
        s.gripper.coord = star;
        assert_eq!(subgoal_reward_low(&s, &targets, &mut l, &c), 1.0);
        assert_eq!(subgoal_reward_low(&s, &targets, &mut l, &c), 0.0);
        let mut far = s.clone();
        far.gripper.coord = [star[0], star[1], star[2] + 21];
        assert_eq!(subgoal_reward_low(&far, &targets, &mut SubgoalLedger::default(), &c), 0.0);
        far.gripper.coord = [star[0], star[1], star[2] + 20];
        assert_eq!(subgoal_reward_low(&far, &targets, &mut SubgoalLedger::default(), &c), 1.0);
    }

    #[test]
    fn matching_ratio_examples() {
        use Color::*;
        use Shape::*;
        let truth = [(Red, Cube), (Blue, Star), (Green, Moon), (Gray, Cylinder), (Rose, Container)];
        let mut pred = truth.to_vec();
        pred[2] = (Yellow, Moon);
        assert_eq!(matching_ratio(&pred, &truth), 0.8);
        assert_eq!(matching_ratio(&truth, &truth), 1.0);
        assert_eq!(matching_ratio(&[], &truth), 0.0);
        let mut long = truth.to_vec();
        long.push((Red, Star));
        assert_eq!(matching_ratio(&long, &truth), 1.0);
    }

    #[test]
    fn unparsable_low_response_pays_both_penalties() {
        let c = cfg();
        let task = ManipTask::new(Color::Red, Shape::Star, Color::Blue, 0, 0).unwrap();
        let (s, _) = reset_low(&task, 0).unwrap();
        let (r, q) = turn_reward_low(&Err(ParseFailure::Empty), &s, &s, false, &[], &mut SubgoalLedger::default(), &c);
        assert_eq!(q, 0.0);
        assert_eq!(r.behavior, -1.0);
        assert!(r.is_consistent());
    }

    #[test]
    fn totals() {
        assert_eq!(total_reward(4.0, 1.0, -0.5).total, 4.5);
        assert_eq!(total_reward(0.0, 0.0, 0.0).total, 0.0);
        assert_eq!(total_reward(0.0, 2.0, 0.5).total, 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = RewardConfig { q_lo: 0.9, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = RewardConfig { desc_bonus: f64::NAN, ..cfg() };
        assert_eq!(bad.validate(), Err(RewardConfigError::NonFinite("desc_bonus")));
        let parsed: RewardConfig = toml::from_str("use_behavior = false").unwrap();
        assert_eq!(parsed.success_high, 4.0);
        assert!(!parsed.use_behavior);
    }

    proptest! {
        #[test]
        fn q_is_bounded(pred in proptest::collection::vec((0usize..20, 0usize..6), 0..8),
                        truth in proptest::collection::vec((0usize..20, 0usize..6), 1..8)) {
            let m = |v: &[(usize, usize)]| -> Vec<(Color, Shape)> {
                v.iter().map(|&(c, s)| (Color::ALL[c], Shape::ALL[s])).collect()
            };
            let q = matching_ratio(&m(&pred), &m(&truth));
            prop_assert!((0.0..=1.0).contains(&q));
        }

        #[test]
        fn ledger_caps_episode_subgoal_total(seq in proptest::collection::vec(0usize..4, 0..30)) {
            let preds = [
                Predicate::Holding("Apple".into()),
                Predicate::IsClean("Apple".into()),
                Predicate::Inside("Apple".into(), "Fridge".into()),
                Predicate::IsOn("DeskLamp".into()),
            ];
            let c = RewardConfig::default();
            let mut l = SubgoalLedger::default();
            let total: f64 = seq.iter().map(|&i| subgoal_reward_high(&[preds[i].clone()], &mut l, &c)).sum();
            prop_assert!(total <= preds.len() as f64);
            prop_assert_eq!(total, l.len() as f64);
        }
    }
}
