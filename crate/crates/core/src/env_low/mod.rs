//! MiniTable: a tabletop with integer coordinates and a teleporting gripper.

pub mod palette;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env_high::{TaskTemplate, UnknownTask};
use crate::types::{EnvKind, Feedback, FeedbackCode, Split};
use crate::vocab::{vocab, Marker, TokenId, MAX_COORD, MAX_INT, NUM_STYLES};
use palette::{Color, Shape};

pub use crate::env_high::Observation;

pub const DEFAULT_HORIZON_LOW: u32 = 15;
/// Resting height of objects on the table.
pub const TABLE_Z: u8 = 17;
pub const HOVER_DZ: u8 = 10;
pub const DEFAULT_ORIENTATION: [u8; 3] = [0, 60, 90];
/// Closing the gripper within this distance of a graspable object attaches it.
pub const GRASP_RADIUS: f64 = 5.0;
/// Horizontal radius within which a released object lands inside a container.
pub const CONTAINER_RADIUS: f64 = 6.0;
/// Lattice of initial x/y coordinates.
pub const LATTICE: [u8; 8] = [15, 25, 35, 45, 55, 65, 75, 85];

/// `[x, y, z, roll, pitch, yaw, gripper]`; gripper 1 is open, 0 closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LowLevelAction(pub [u8; 7]);

impl LowLevelAction {
    pub fn new(xyz: [u8; 3], rpy: [u8; 3], gripper_open: bool) -> Self {
        LowLevelAction([xyz[0], xyz[1], xyz[2], rpy[0], rpy[1], rpy[2], gripper_open as u8])
    }

    pub fn xyz(&self) -> [u8; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn rpy(&self) -> [u8; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn in_range(&self) -> bool {
        self.xyz().iter().all(|&c| c <= MAX_COORD) && self.rpy().iter().all(|&c| c <= MAX_INT) && self.0[6] <= 1
    }
}

impl fmt::Display for LowLevelAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableObject {
    pub name: String,
    /// Simulator-style name; the description label drops its first word.
    pub real_name: String,
    pub color: Color,
    pub rgb: [f64; 3],
    pub shape: Shape,
    pub coord: [u8; 3],
}

impl TableObject {
    pub fn container(&self) -> bool {
        self.shape.is_container()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gripper {
    pub coord: [u8; 3],
    pub orientation: [u8; 3],
    pub closed: bool,
    pub held: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableState {
    /// Insertion-ordered objects; names are unique.
    pub objects: Vec<TableObject>,
    pub gripper: Gripper,
    pub step: u32,
    pub horizon: u32,
    pub last_feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManipTask {
    pub instruction: String,
    pub target_color: Color,
    pub target_shape: Shape,
    pub container_color: Color,
    pub style: u8,
    pub seed: u64,
    pub split: Split,
    pub horizon: u32,
}

fn object_name(c: Color, s: Shape) -> String {
    format!("{c} {s}")
}

/// Held-out target color-shape pairs.
pub(crate) fn pair_is_unseen(c: Color, s: Shape) -> bool {
    Sha256::digest(format!("{c}|{s}").as_bytes())[0] % 5 == 0
}

impl ManipTask {
    pub fn new(target_color: Color, target_shape: Shape, container_color: Color, style: u8, seed: u64) -> Result<Self, UnknownTask> {
        if target_shape.is_container() {
            return Err(UnknownTask(format!("cannot grasp a {target_shape}")));
        }
        let style = style % NUM_STYLES;
        let (t, c) = (object_name(target_color, target_shape), container_color);
        let instruction = match style {
            0 => format!("Pick up the {t} and place it into the {c} container."),
            1 => format!("Put the {t} into the {c} container."),
            2 => format!("Move the {t} so that it ends up in the {c} container."),
            _ => format!("Drop the {t} inside the {c} container."),
        };
        let split = if pair_is_unseen(target_color, target_shape) { Split::Unseen } else { Split::Seen };
        Ok(ManipTask {
            instruction,
            target_color,
            target_shape,
            container_color,
            style,
            seed,
            split,
            horizon: DEFAULT_HORIZON_LOW,
        })
    }

    pub fn template(&self) -> TaskTemplate {
        TaskTemplate::PlaceIn
    }

    pub fn target_name(&self) -> String {
        object_name(self.target_color, self.target_shape)
    }

    pub fn container_name(&self) -> String {
        object_name(self.container_color, Shape::Container)
    }

    /// `<|instr|> task style color shape color container`
    pub fn instruction_tokens(&self) -> Vec<TokenId> {
        let v = vocab();
        vec![
            v.marker(Marker::Instr),
            v.task(TaskTemplate::PlaceIn),
            v.style(self.style),
            v.color(self.target_color),
            v.shape(self.target_shape),
            v.color(self.container_color),
            v.shape(Shape::Container),
        ]
    }

    /// Objects whose first approach earns a subgoal reward.
    pub fn target_objects(&self) -> Vec<String> {
        vec![self.target_name(), self.container_name()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("task serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, UnknownTask> {
        let t: ManipTask = serde_json::from_str(s).map_err(|e| UnknownTask(e.to_string()))?;
        let fresh = ManipTask::new(t.target_color, t.target_shape, t.container_color, t.style, t.seed)?;
        Ok(ManipTask { horizon: t.horizon.max(1), ..fresh })
    }
}

/// `n` MiniTable tasks from the split; seen tasks use phrasing styles 0-1.
pub fn manip_suite(split: Split, n: usize, seed: u64) -> Vec<ManipTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0002);
    let pairs: Vec<(Color, Shape)> = Color::ALL
        .iter()
        .flat_map(|&c| Shape::GRASPABLE.iter().map(move |&s| (c, s)))
        .filter(|&(c, s)| pair_is_unseen(c, s) == (split == Split::Unseen))
        .collect();
    let styles: &[u8] = match split {
        Split::Seen => &[0, 1],
        Split::Unseen => &[0, 1, 2, 3],
    };
    (0..n)
        .map(|_| {
            let &(c, s) = pairs.choose(&mut rng).unwrap();
            let cc = *Color::ALL.choose(&mut rng).unwrap();
            let style = *styles.choose(&mut rng).unwrap();
            ManipTask::new(c, s, cc, style, rng.gen()).expect("graspable target")
        })
        .collect()
}

fn jitter_rgb(c: Color, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let base = c.rgb();
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = (base[i] + rng.gen_range(-0.08..=0.08)).clamp(0.0, 1.0);
    }
    out
}

fn task_hash(task: &ManipTask) -> u64 {
    let d = Sha256::digest(format!("{}|{}|{}", task.target_color, task.target_shape, task.container_color).as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

const SIZE_WORDS: [&str; 3] = ["small", "large", "plain"];

/// Deterministic scene: the target, its container and one distractor on
/// distinct lattice rows.
pub fn reset_low(task: &ManipTask, seed: u64) -> Result<(TableState, Observation), UnknownTask> {
    if task.target_shape.is_container() {
        return Err(UnknownTask("target must be graspable".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task_hash(task));
    let mut ys = LATTICE.to_vec();
    ys.shuffle(&mut rng);
    let distractor = loop {
        let c = *Color::ALL.choose(&mut rng).unwrap();
        let s = *Shape::ALL.choose(&mut rng).unwrap();
        let clash = (c == task.target_color && s == task.target_shape) || (c == task.container_color && s.is_container());
        if !clash {
            break (c, s);
        }
    };
    let specs = [(task.target_color, task.target_shape), (task.container_color, Shape::Container), distractor];
    let objects = specs
        .iter()
        .zip(ys)
        .map(|(&(color, shape), y)| {
            let x = *LATTICE.choose(&mut rng).unwrap();
            let real_name = format!("{} {shape}", SIZE_WORDS.choose(&mut rng).unwrap());
            TableObject {
                name: object_name(color, shape),
                real_name,
                color,
                rgb: jitter_rgb(color, &mut rng),
                shape,
                coord: [x, y, TABLE_Z],
            }
        })
        .collect();
    let state = TableState {
        objects,
        gripper: Gripper { coord: [50, 50, 50], orientation: DEFAULT_ORIENTATION, closed: false, held: None },
        step: 0,
        horizon: task.horizon,
        last_feedback: None,
    };
    let obs = render_observation_low(&state);
    Ok((state, obs))
}

fn dist(a: [u8; 3], b: [u8; 3]) -> f64 {
    (0..3).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum::<f64>().sqrt()
}

fn dist_xy(a: [u8; 3], b: [u8; 3]) -> f64 {
    (0..2).map(|i| (a[i] as f64 - b[i] as f64).powi(2)).sum::<f64>().sqrt()
}

impl TableState {
    pub fn object(&self, name: &str) -> Option<&TableObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    fn object_mut(&mut self, name: &str) -> Option<&mut TableObject> {
        self.objects.iter_mut().find(|o| o.name == name)
    }

    /// Euclidean distance from the gripper to an object.
    pub fn gripper_distance(&self, name: &str) -> Option<f64> {
        self.object(name).map(|o| dist(self.gripper.coord, o.coord))
    }

    /// Objects sorted by Y ascending (then X, then name).
    pub fn y_sorted(&self) -> Vec<&TableObject> {
        let mut v: Vec<&TableObject> = self.objects.iter().collect();
        v.sort_by(|a, b| (a.coord[1], a.coord[0], &a.name).cmp(&(b.coord[1], b.coord[0], &b.name)));
        v
    }
}

/// Placement goal: target resting within the container's footprint.
pub fn check_goal_low(state: &TableState, task: &ManipTask) -> bool {
    let (Some(t), Some(c)) = (state.object(&task.target_name()), state.object(&task.container_name())) else {
        return false;
    };
    state.gripper.held.as_deref() != Some(t.name.as_str())
        && dist_xy(t.coord, c.coord) <= CONTAINER_RADIUS
        && t.coord[2] >= c.coord[2]
        && t.coord[2] <= c.coord[2] + HOVER_DZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowStepOutcome {
    pub feedback: Feedback,
    pub done: bool,
    pub success: bool,
}

/// Teleports the gripper to the commanded pose, then applies the gripper
/// command. `None` is an unparsable response.
pub fn step_low(state: &TableState, task: &ManipTask, action: Option<&LowLevelAction>) -> (TableState, LowStepOutcome) {
    let mut next = state.clone();
    let feedback = match action {
        None => Feedback::parse_error(),
        Some(a) if !a.in_range() => {
            Feedback::invalid(FeedbackCode::OutOfRange, "The action is outside the allowed range")
        }
        Some(a) => {
            apply_low(&mut next, a);
            Feedback::ok(EnvKind::Low)
        }
    };
    next.step += 1;
    let success = check_goal_low(&next, task);
    let done = success || next.step >= next.horizon;
    next.last_feedback = Some(feedback.clone());
    (next, LowStepOutcome { feedback, done, success })
}

fn apply_low(s: &mut TableState, a: &LowLevelAction) {
    s.gripper.coord = a.xyz();
    s.gripper.orientation = a.rpy();
    if let Some(h) = s.gripper.held.clone() {
        let g = s.gripper.coord;
        s.object_mut(&h).unwrap().coord = g;
    }
    let want_open = a.0[6] == 1;
    if !want_open && !s.gripper.closed {
        s.gripper.closed = true;
        let g = s.gripper.coord;
        let grab = s
            .objects
            .iter()
            .filter(|o| !o.container())
            .map(|o| (dist(g, o.coord), o.name.clone()))
            .filter(|(d, _)| *d <= GRASP_RADIUS)
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        if let Some((_, name)) = grab {
            s.object_mut(&name).unwrap().coord = g;
            s.gripper.held = Some(name);
        }
    } else if want_open && s.gripper.closed {
        s.gripper.closed = false;
        if let Some(h) = s.gripper.held.take() {
            let g = s.gripper.coord;
            let landing = s
                .objects
                .iter()
                .filter(|o| o.container() && dist_xy(o.coord, g) <= CONTAINER_RADIUS)
                .map(|o| o.coord[2] + 1)
                .next()
                .unwrap_or(TABLE_Z);
            s.object_mut(&h).unwrap().coord = [g[0], g[1], landing.min(g[2])];
        }
    }
}

/// Scene entries ordered by Y ascending.
pub fn ground_truth_scene(state: &TableState) -> Vec<(Color, Shape, [u8; 3])> {
    state.y_sorted().into_iter().map(|o| (o.color, o.shape, o.coord)).collect()
}

/// `{"object 1": [35, 15, 17], ...}` in Y order.
pub fn additional_info(state: &TableState) -> String {
    let parts: Vec<String> = state
        .y_sorted()
        .iter()
        .enumerate()
        .map(|(i, o)| format!("\"object {}\": [{}, {}, {}]", i + 1, o.coord[0], o.coord[1], o.coord[2]))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// Parses the `additional_info` map back into ordered coordinates.
pub fn parse_additional_info(s: &str) -> Result<Vec<[u8; 3]>, serde_json::Error> {
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(s)?;
    let mut entries: Vec<(usize, [u8; 3])> = Vec::new();
    for (k, v) in map {
        let idx: usize = k.trim_start_matches("object ").parse().unwrap_or(usize::MAX);
        let c: [u8; 3] = serde_json::from_value(v)?;
        entries.push((idx, c));
    }
    entries.sort();
    Ok(entries.into_iter().map(|(_, c)| c).collect())
}

/// Token view: Y-ordered (color, shape, x, y, z) entries, gripper pose and
/// state, and the last feedback code.
pub fn render_observation_low(state: &TableState) -> Observation {
    let v = vocab();
    let int = |n: u8| v.int(n).expect("coordinate token");
    let mut tokens = vec![v.marker(Marker::Obs)];
    for o in state.y_sorted() {
        tokens.push(v.color(o.color));
        tokens.push(v.shape(o.shape));
        tokens.extend(o.coord.iter().map(|&c| int(c)));
    }
    tokens.push(v.marker(Marker::Grip));
    tokens.extend(state.gripper.coord.iter().map(|&c| int(c)));
    tokens.push(int(!state.gripper.closed as u8));
    let mut text = format!("additional_info: {}", additional_info(state));
    if let Some(fb) = &state.last_feedback {
        tokens.push(v.marker(Marker::Fb));
        tokens.push(v.feedback(fb.code));
        text.push(' ');
        text.push_str(&fb.text);
    }
    Observation { tokens, text }
}

/// Five-waypoint scripted grasp-and-place from the current state.
pub fn expert_plan_low(task: &ManipTask, state: &TableState) -> Result<Vec<LowLevelAction>, UnknownTask> {
    let t = state.object(&task.target_name()).ok_or_else(|| UnknownTask(task.target_name()))?;
    let c = state.object(&task.container_name()).ok_or_else(|| UnknownTask(task.container_name()))?;
    let o = DEFAULT_ORIENTATION;
    let above = |p: [u8; 3]| [p[0], p[1], p[2] + HOVER_DZ];
    Ok(vec![
        LowLevelAction::new(above(t.coord), o, true),
        LowLevelAction::new(t.coord, o, false),
        LowLevelAction::new(above(t.coord), o, false),
        LowLevelAction::new(above(c.coord), o, false),
        LowLevelAction::new(above(c.coord), o, true),
    ])
}

/// A MiniTable episode: task plus evolving state.
#[derive(Debug, Clone)]
pub struct MiniTable {
    pub task: ManipTask,
    pub state: TableState,
    /// Target objects already approached.
    pub approached: BTreeSet<String>,
}

impl MiniTable {
    pub fn new(task: ManipTask, seed: u64) -> Result<Self, UnknownTask> {
        let (state, _) = reset_low(&task, seed)?;
        Ok(MiniTable { task, state, approached: BTreeSet::new() })
    }

    pub fn observe(&self) -> Observation {
        render_observation_low(&self.state)
    }

    pub fn step(&mut self, action: Option<&LowLevelAction>) -> LowStepOutcome {
        let (next, out) = step_low(&self.state, &self.task, action);
        self.state = next;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn task() -> ManipTask {
        ManipTask::new(Color::Orange, Shape::Star, Color::Silver, 0, 0).unwrap()
    }

    fn run_expert(task: &ManipTask, seed: u64) -> (TableState, bool) {
        let (mut s, _) = reset_low(task, seed).unwrap();
        let plan = expert_plan_low(task, &s).unwrap();
        assert_eq!(plan.len(), 5);
        let mut success = false;
        for a in &plan {
            assert!(a.in_range());
            let (n, o) = step_low(&s, task, Some(a));
            assert!(o.feedback.valid);
            assert_eq!(o.feedback.text, "Last action was successful.");
            success = o.success;
            s = n;
        }
        (s, success)
    }

    #[test]
    fn expert_hovers_ten_units_above_the_target() {
        let t = task();
        let (s, _) = reset_low(&t, 3).unwrap();
        let plan = expert_plan_low(&t, &s).unwrap();
        let star = s.object("orange star").unwrap();
        assert_eq!(star.coord[2], 17);
        assert_eq!(plan[0].xyz(), [star.coord[0], star.coord[1], 27]);
        assert_eq!(plan[0].0[6], 1);
        assert_eq!(plan[1].0[6], 0);
    }

    #[test]
    fn grasped_star_follows_the_gripper() {
        let t = task();
        let (s, _) = reset_low(&t, 0).unwrap();
        let plan = expert_plan_low(&t, &s).unwrap();
        let (s, _) = step_low(&s, &t, Some(&plan[0]));
        let (s, _) = step_low(&s, &t, Some(&plan[1]));
        let (s, _) = step_low(&s, &t, Some(&plan[2]));
        assert_eq!(s.gripper.held.as_deref(), Some("orange star"));
        assert_eq!(s.object("orange star").unwrap().coord, s.gripper.coord);
    }

    #[test]
    fn out_of_range_yaw_leaves_state_unchanged() {
        let t = task();
        let (s, _) = reset_low(&t, 0).unwrap();
        let (n, o) = step_low(&s, &t, Some(&LowLevelAction([50, 50, 50, 0, 60, 131, 1])));
        assert!(!o.feedback.valid);
        assert_eq!(o.feedback.code, FeedbackCode::OutOfRange);
        assert_eq!(n.objects, s.objects);
        assert_eq!(n.gripper, s.gripper);
        assert_eq!(n.step, 1);
    }

    #[test]
    fn expert_solves_seeded_tasks() {
        for t in manip_suite(Split::Seen, 40, 1).into_iter().chain(manip_suite(Split::Unseen, 40, 1)) {
            assert!(run_expert(&t, t.seed).1, "{t:?}");
        }
    }

    #[test]
    fn ground_truth_sorts_by_y() {
        let (mut s, _) = reset_low(&task(), 0).unwrap();
        for (o, y) in s.objects.iter_mut().zip([37, 15, 18]) {
            o.coord[1] = y;
        }
        let ys: Vec<u8> = ground_truth_scene(&s).iter().map(|e| e.2[1]).collect();
        assert_eq!(ys, vec![15, 18, 37]);
        s.objects.reverse();
        let again: Vec<u8> = ground_truth_scene(&s).iter().map(|e| e.2[1]).collect();
        assert_eq!(again, ys);
        s.objects.truncate(1);
        assert_eq!(ground_truth_scene(&s).len(), 1);
    }

    #[test]
    fn additional_info_matches_scene_order() {
        let (s, _) = reset_low(&task(), 5).unwrap();
        let info = additional_info(&s);
        assert!(info.starts_with("{\"object 1\": ["));
        let coords = parse_additional_info(&info).unwrap();
        let truth: Vec<[u8; 3]> = ground_truth_scene(&s).iter().map(|e| e.2).collect();
        assert_eq!(coords, truth);
    }

    #[test]
    fn reset_is_deterministic_with_three_objects() {
        let t = task();
        assert_eq!(reset_low(&t, 9).unwrap().0, reset_low(&t, 9).unwrap().0);
        assert_eq!(reset_low(&t, 9).unwrap().0.objects.len(), 3);
        assert_eq!(LowLevelAction([57, 74, 27, 0, 60, 90, 1]).to_string(), "[57, 74, 27, 0, 60, 90, 1]");
    }

    proptest! {
        #[test]
        fn held_object_tracks_gripper_and_ranges_hold(
            seed in 0u64..50,
            acts in prop::collection::vec(prop::array::uniform7(0u8..=125), 1..12),
        ) {
            let t = task();
            let (mut s, _) = reset_low(&t, seed).unwrap();
            for a in acts {
                let mut a = LowLevelAction(a);
                a.0[6] %= 2;
                s = step_low(&s, &t, Some(&a)).0;
                if let Some(h) = &s.gripper.held {
                    prop_assert_eq!(s.object(h).unwrap().coord, s.gripper.coord);
                }
                for o in &s.objects {
                    prop_assert!(o.coord.iter().all(|&c| c <= 100));
                }
                prop_assert!(s.gripper.orientation.iter().all(|&c| c <= 120));
            }
        }
    }
}
