//! Environment-anchored QA: masked action modeling, sequence reordering,
//! coordinate grounding, plus the rule-based scene description.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env_low::palette::Color;
use crate::env_low::{render_observation_low, TableObject, TableState};
use crate::response::{
    article_phrase, decode_action, encode_action, encode_response, visual_sentence, Reflection,
    ResponseAction, StructuredResponse,
};
use crate::types::EnvKind;
use crate::vocab::{vocab, Marker, QueryWord, Special, Tag, TokenId};

/// An instruction with its action sequence, the raw material for the
/// sequence-level QA generators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSeq {
    pub env: EnvKind,
    pub instruction: String,
    pub instruction_tokens: Vec<TokenId>,
    pub actions: Vec<ResponseAction>,
}

/// A generated question/answer pair in both token and text form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaPair {
    pub query: Vec<TokenId>,
    pub answer: Vec<TokenId>,
    pub query_text: String,
    pub answer_text: String,
    /// Masked index, permutation or grounded object, as a short string.
    pub detail: String,
}

fn assistant(env: EnvKind) -> &'static str {
    match env {
        EnvKind::High => "household assistant",
        EnvKind::Low => "robotic arm assistant",
    }
}

fn quoted_list(items: &[String]) -> String {
    let q: Vec<String> = items.iter().map(|s| format!("\"{s}\"")).collect();
    format!("[{}]", q.join(", "))
}

fn action_words(a: &ResponseAction) -> String {
    match a {
        ResponseAction::High(h) => h.phrase(),
        ResponseAction::Low(l) => l.to_string(),
    }
}

/// `<|act|> a` groups after the query marker.
fn act_groups(tokens: &[TokenId]) -> Vec<Vec<TokenId>> {
    let act = vocab().marker(Marker::Act);
    let end = vocab().tag(Tag::ActionEnd);
    let mut out: Vec<Vec<TokenId>> = Vec::new();
    for &t in tokens {
        if t == act {
            out.push(Vec::new());
        } else if t == end {
            break;
        } else if let Some(g) = out.last_mut() {
            g.push(t);
        }
    }
    out
}

fn query_head(seq: &ActionSeq, q: QueryWord) -> Vec<TokenId> {
    let v = vocab();
    let mut x = seq.instruction_tokens.clone();
    x.push(v.marker(Marker::Query));
    x.push(v.query(q));
    x
}

/// Masks one uniformly chosen action. The answer is a bare response carrying
/// the masked action.
pub fn gen_masked_action(seq: &ActionSeq, rng: &mut impl Rng) -> Option<QaPair> {
    if seq.actions.is_empty() {
        return None;
    }
    let v = vocab();
    let t = rng.gen_range(0..seq.actions.len());
    let mut query = query_head(seq, QueryWord::Masked);
    let mut words = Vec::new();
    for (i, a) in seq.actions.iter().enumerate() {
        query.push(v.marker(Marker::Act));
        if i == t {
            query.push(v.special(Special::Mask));
            words.push("[MASK]".to_string());
        } else {
            query.extend(encode_action(a).ok()?);
            words.push(action_words(a));
        }
    }
    let answer = encode_response(&StructuredResponse::bare(Reflection::Continue, seq.actions[t].clone())).ok()?;
    let missing = action_words(&seq.actions[t]);
    Some(QaPair {
        query,
        answer,
        query_text: format!(
            "You are a {}. You are given an instruction: \"{}\" and an incomplete action sequence: {}. Please identify the missing action to complete the sequence.",
            assistant(seq.env),
            seq.instruction,
            quoted_list(&words)
        ),
        answer_text: format!(
            "Step {} must connect the actions before and after it, so the missing action is \"{missing}\".",
            t + 1
        ),
        detail: t.to_string(),
    })
}

/// Index of the `[MASK]` group in a masked query.
pub fn mask_index(query: &[TokenId]) -> Option<usize> {
    let mask = vocab().special(Special::Mask);
    let groups = act_groups(query);
    let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == [mask]).collect();
    match idx.as_slice() {
        [i] => Some(*i),
        _ => None,
    }
}

/// Puts the answered action back into the masked slot.
pub fn reinsert_masked(query: &[TokenId], answer: &[TokenId], env: EnvKind) -> Option<Vec<ResponseAction>> {
    let idx = mask_index(query)?;
    let filled = crate::response::decode_response(answer, env).ok()?.action;
    act_groups(query)
        .iter()
        .enumerate()
        .map(|(i, g)| if i == idx { Some(filled.clone()) } else { decode_action(g, env).ok() })
        .collect()
}

/// Longest window shown in a reordering query (keeps answers inside the
/// response length cap).
pub fn reorder_window(env: EnvKind) -> usize {
    match env {
        EnvKind::High => 9,
        EnvKind::Low => 3,
    }
}

/// Shuffles a contiguous window of actions. The identity permutation is
/// resampled when the window has more than two actions.
pub fn gen_reorder(seq: &ActionSeq, rng: &mut impl Rng) -> Option<QaPair> {
    if seq.actions.len() < 2 {
        return None;
    }
    let v = vocab();
    let w = reorder_window(seq.env).min(seq.actions.len());
    let start = rng.gen_range(0..=seq.actions.len() - w);
    let window = &seq.actions[start..start + w];
    let mut perm: Vec<usize> = (0..w).collect();
    loop {
        perm.shuffle(rng);
        let moved = perm.iter().enumerate().any(|(i, &p)| window[i] != window[p]);
        if w <= 2 || moved || window.iter().all(|a| *a == window[0]) {
            break;
        }
    }
    let mut query = query_head(seq, QueryWord::Reorder);
    for &p in &perm {
        query.push(v.marker(Marker::Act));
        query.extend(encode_action(&window[p]).ok()?);
    }
    let mut answer = vec![v.tag(Tag::ThinkStart), v.reflection(Reflection::Continue)?, v.tag(Tag::ThinkEnd)];
    for a in window {
        answer.push(v.marker(Marker::Act));
        answer.extend(encode_action(a).ok()?);
    }
    answer.push(v.tag(Tag::ActionEnd));
    let shuffled: Vec<String> = perm.iter().map(|&p| action_words(&window[p])).collect();
    let ordered: Vec<String> = window.iter().map(action_words).collect();
    Some(QaPair {
        query,
        answer,
        query_text: format!(
            "You are a {}. You are given the instruction: \"{}\" The randomized action sequences are {}. Your task is to generate the correct sequence of actions to accomplish the instruction.",
            assistant(seq.env),
            seq.instruction,
            quoted_list(&shuffled)
        ),
        answer_text: format!(
            "As a {}, to accomplish the instruction \"{}\", the correct sequence of actions is: {}.",
            assistant(seq.env),
            seq.instruction,
            quoted_list(&ordered)
        ),
        detail: format!("{start}:{perm:?}"),
    })
}

/// Decoded `(query actions, answer actions)` of a reordering pair.
pub fn reorder_actions(query: &[TokenId], answer: &[TokenId], env: EnvKind) -> Option<(Vec<ResponseAction>, Vec<ResponseAction>)> {
    let dec = |gs: Vec<Vec<TokenId>>| gs.iter().map(|g| decode_action(g, env).ok()).collect::<Option<Vec<_>>>();
    Some((dec(act_groups(query))?, dec(act_groups(answer))?))
}

/// Whether the answer is a permutation of the query's actions.
pub fn is_permutation(a: &[ResponseAction], b: &[ResponseAction]) -> bool {
    let key = |x: &ResponseAction| serde_json::to_string(x).unwrap_or_default();
    let mut ka: Vec<String> = a.iter().map(key).collect();
    let mut kb: Vec<String> = b.iter().map(key).collect();
    ka.sort();
    kb.sort();
    ka == kb
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingKind {
    Abs,
    Rel,
    Comb,
}

fn int(n: usize) -> TokenId {
    vocab().int(n.min(crate::vocab::MAX_INT as usize) as u8).expect("int token")
}

fn coord_tokens(c: [u8; 3]) -> Vec<TokenId> {
    c.iter().map(|&x| int(x as usize)).collect()
}

fn coord_text(c: [u8; 3]) -> String {
    format!("[{}, {}, {}]", c[0], c[1], c[2])
}

fn ordinal(k: usize) -> String {
    let suffix = match (k % 10, k % 100) {
        (1, x) if x != 11 => "st",
        (2, x) if x != 12 => "nd",
        (3, x) if x != 13 => "rd",
        _ => "th",
    };
    format!("{k}{suffix}")
}

/// Scene tokens without the trailing feedback.
fn scene_tokens(state: &TableState) -> Vec<TokenId> {
    let mut s = state.clone();
    s.last_feedback = None;
    render_observation_low(&s).tokens
}

/// One grounding QA pair about `state`. Relative ranks run by Y ascending
/// (rank 1 is the leftmost).
pub fn gen_grounding(state: &TableState, kind: GroundingKind, rng: &mut impl Rng) -> Option<QaPair> {
    let objs = state.y_sorted();
    if objs.is_empty() {
        return None;
    }
    let v = vocab();
    let end = v.tag(Tag::ActionEnd);
    let n = objs.len();
    let mut query = scene_tokens(state);
    query.push(v.marker(Marker::Query));
    let (answer, query_text, answer_text, detail);
    match kind {
        GroundingKind::Abs => {
            let o = objs[rng.gen_range(0..n)];
            if rng.gen_bool(0.5) {
                query.extend([v.query(QueryWord::CoordOf), v.color(o.color), v.shape(o.shape)]);
                answer = [coord_tokens(o.coord), vec![end]].concat();
                query_text = format!("What is the 3D coordinate of the {} {}?", o.color, o.shape);
                answer_text = coord_text(o.coord);
            } else {
                query.push(v.query(QueryWord::ObjectAt));
                query.extend(coord_tokens(o.coord));
                answer = vec![v.color(o.color), v.shape(o.shape), end];
                query_text = format!("What object is located at {}?", coord_text(o.coord));
                answer_text = format!("The {} {}", o.color, o.shape);
            }
            detail = o.name.clone();
        }
        GroundingKind::Rel => {
            let k = rng.gen_range(1..=n);
            let o = objs[k - 1];
            query.push(v.query(QueryWord::RelLocation));
            let phrase = if k == 1 && (n > 1 || rng.gen_bool(0.5)) {
                query.push(v.query(QueryWord::Leftmost));
                "leftmost".to_string()
            } else if k == n {
                query.push(v.query(QueryWord::Rightmost));
                "rightmost".to_string()
            } else {
                query.push(int(k));
                format!("{} leftmost", ordinal(k))
            };
            answer = [coord_tokens(o.coord), vec![end]].concat();
            query_text = format!("What is the 3D location of the {phrase} object?");
            answer_text = coord_text(o.coord);
            detail = o.name.clone();
        }
        GroundingKind::Comb => {
            let leftmost = rng.gen_bool(0.5);
            let extreme = if leftmost { objs[0] } else { objs[n - 1] };
            let others: Vec<&TableObject> = objs.iter().copied().filter(|o| o.coord != extreme.coord).collect();
            let yes = others.is_empty() || rng.gen_bool(0.5);
            let o = if yes { extreme } else { *others.choose(rng)? };
            query.push(v.query(QueryWord::IsRel));
            query.extend(coord_tokens(o.coord));
            query.push(v.query(if leftmost { QueryWord::Leftmost } else { QueryWord::Rightmost }));
            answer = vec![v.query(if yes { QueryWord::Yes } else { QueryWord::No }), end];
            query_text = format!(
                "Is the object located at {} the {} in the scene?",
                coord_text(o.coord),
                if leftmost { "leftmost" } else { "rightmost" }
            );
            answer_text = if yes { "Yes" } else { "No" }.to_string();
            detail = o.name.clone();
        }
    }
    Some(QaPair { query, answer, query_text, answer_text, detail })
}

/// Names whose full simulator name is kept in descriptions.
const KEEP_FULL_NAME: [&str; 2] = ["sponge", "shape sorter"];

/// Color-prefixed label: the real name minus its first word, or the whole
/// real name for the exceptions.
pub fn visual_label(color: Color, real_name: &str) -> String {
    if KEEP_FULL_NAME.contains(&real_name) {
        return format!("{color} {real_name}");
    }
    let rest = real_name.split_once(' ').map(|(_, r)| r).unwrap_or(real_name);
    format!("{color} {rest}")
}

/// "From left to right, I can see ..." built from simulator attributes:
/// colors come from nearest-palette classification of each object's RGB.
pub fn gen_visual_description(state: &TableState) -> String {
    let phrases: Vec<String> = state
        .y_sorted()
        .iter()
        .map(|o| article_phrase(&visual_label(Color::classify(o.rgb), &o.real_name), o.coord))
        .collect();
    visual_sentence(&phrases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_high::HighLevelAction;
    use crate::env_low::palette::Shape;
    use crate::env_low::{ground_truth_scene, manip_suite, reset_low, Gripper, DEFAULT_ORIENTATION};
    use crate::response::{describe_visual, VisualEntry};
    use crate::types::Split;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(n: usize) -> ActionSeq {
        let names = ["Apple", "Plate", "Shelf", "Fridge", "Bowl", "Mug", "Desk", "Sofa", "Cup", "Book", "Egg"];
        ActionSeq {
            env: EnvKind::High,
            instruction: "Put the Apple in the Shelf.".into(),
            instruction_tokens: vec![vocab().marker(Marker::Instr)],
            actions: (0..n).map(|i| ResponseAction::High(HighLevelAction::find(names[i % names.len()]))).collect(),
        }
    }

    fn obj(color: Color, shape: Shape, coord: [u8; 3]) -> TableObject {
        TableObject {
            name: format!("{color} {shape}"),
            real_name: format!("small {shape}"),
            color,
            rgb: color.rgb(),
            shape,
            coord,
        }
    }

    fn scene(objects: Vec<TableObject>) -> TableState {
        TableState {
            objects,
            gripper: Gripper { coord: [50, 50, 50], orientation: DEFAULT_ORIENTATION, closed: false, held: None },
            step: 0,
            horizon: 15,
            last_feedback: None,
        }
    }

    #[test]
    fn single_action_masks_index_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let qa = gen_masked_action(&seq(1), &mut rng).unwrap();
        assert_eq!(mask_index(&qa.query), Some(0));
        assert!(qa.query_text.contains("[\"[MASK]\"]"));
    }

    #[test]
    fn mask_index_is_roughly_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = seq(5);
        let mut counts = [0f64; 5];
        let n = 10_000;
        for _ in 0..n {
            counts[mask_index(&gen_masked_action(&s, &mut rng).unwrap().query).unwrap()] += 1.0;
        }
        let e = n as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 4 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 18.47, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn reorder_single_swap_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = seq(2);
        let qa = gen_reorder(&s, &mut rng).unwrap();
        let (q, a) = reorder_actions(&qa.query, &qa.answer, EnvKind::High).unwrap();
        assert_eq!(a, s.actions);
        assert!(is_permutation(&q, &a));
    }

    #[test]
    fn long_reorders_are_never_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 3..12 {
            for _ in 0..50 {
                let qa = gen_reorder(&seq(n), &mut rng).unwrap();
                let (q, a) = reorder_actions(&qa.query, &qa.answer, EnvKind::High).unwrap();
                assert_ne!(q, a);
                assert!(qa.answer.len() <= crate::response::MAX_RESPONSE_TOKENS);
            }
        }
    }

    #[test]
    fn gray_moon_example() {
        let s = scene(vec![obj(Color::Gray, Shape::Moon, [42, 11, 17]), obj(Color::Red, Shape::Cube, [41, 80, 18])]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut seen_coord = false;
        let mut seen_yes = false;
        for _ in 0..200 {
            let qa = gen_grounding(&s, GroundingKind::Abs, &mut rng).unwrap();
            if qa.query_text == "What is the 3D coordinate of the gray moon?" {
                assert_eq!(qa.answer_text, "[42, 11, 17]");
                seen_coord = true;
            }
            let qa = gen_grounding(&s, GroundingKind::Comb, &mut rng).unwrap();
            if qa.query_text == "Is the object located at [42, 11, 17] the leftmost in the scene?" {
                assert_eq!(qa.answer_text, "Yes");
                seen_yes = true;
            }
        }
        assert!(seen_coord && seen_yes);
    }

    #[test]
    fn single_object_is_both_extremes() {
        let s = scene(vec![obj(Color::Blue, Shape::Star, [30, 40, 17])]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let qa = gen_grounding(&s, GroundingKind::Rel, &mut rng).unwrap();
            assert_eq!(qa.answer_text, "[30, 40, 17]");
            assert!(qa.query_text.contains("leftmost") || qa.query_text.contains("rightmost"));
            assert_eq!(gen_grounding(&s, GroundingKind::Comb, &mut rng).unwrap().answer_text, "Yes");
        }
    }

    #[test]
    fn comb_answers_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let task = &manip_suite(Split::Seen, 1, 0)[0];
        let (s, _) = reset_low(task, 0).unwrap();
        let yes = (0..2000).filter(|_| gen_grounding(&s, GroundingKind::Comb, &mut rng).unwrap().answer_text == "Yes").count();
        assert!((900..1100).contains(&yes), "{yes}");
    }

    #[test]
    fn orange_star_phrase() {
        assert_eq!(article_phrase(&visual_label(Color::Orange, "small star"), [57, 74, 17]), "an orange star at [57, 74, 17]");
        assert_eq!(visual_label(Color::Yellow, "sponge"), "yellow sponge");
        assert_eq!(visual_label(Color::Red, "shape sorter"), "red shape sorter");
        assert_eq!(Color::classify([1.0, 0.0, 0.0]), Color::Red);
        assert_eq!(Color::classify([0.9, 0.1, 0.1]), Color::Red);
    }

    proptest! {
        #[test]
        fn masked_reinsertion_restores_sequence(n in 1usize..20, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = seq(n);
            let qa = gen_masked_action(&s, &mut rng).unwrap();
            prop_assert_eq!(reinsert_masked(&qa.query, &qa.answer, EnvKind::High).unwrap(), s.actions);
        }

        #[test]
        fn reorder_answer_is_a_permutation(n in 2usize..20, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qa = gen_reorder(&seq(n), &mut rng).unwrap();
            let (q, a) = reorder_actions(&qa.query, &qa.answer, EnvKind::High).unwrap();
            prop_assert!(is_permutation(&q, &a));
        }

        #[test]
        fn descriptions_match_ground_truth(seed in 0u64..500) {
            let task = &manip_suite(Split::Seen, 1, seed)[0];
            let (s, _) = reset_low(task, seed).unwrap();
            let truth: Vec<VisualEntry> =
                ground_truth_scene(&s).into_iter().map(|(color, shape, coord)| VisualEntry { color, shape, coord }).collect();
            prop_assert_eq!(gen_visual_description(&s), describe_visual(&truth));
        }

        #[test]
        fn leftmost_agrees_with_absolute_coordinate(seed in 0u64..500) {
            let task = &manip_suite(Split::Seen, 1, seed)[0];
            let (s, _) = reset_low(task, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let first = s.y_sorted()[0].clone();
            loop {
                let qa = gen_grounding(&s, GroundingKind::Rel, &mut rng).unwrap();
                if qa.query_text == "What is the 3D location of the leftmost object?" {
                    prop_assert_eq!(qa.answer_text, coord_text(first.coord));
                    break;
                }
            }
        }
    }
}
