//! Resets a MiniTable task, prints the rule-based scene description and scores
//! a correct and a shuffled description with the matching ratio.

use era_core::env_low::{additional_info, ground_truth_scene, manip_suite, reset_low};
use era_core::rewards::{behavior_reward_low, matching_ratio, RewardConfig};
use era_core::types::Split;

fn main() {
    let task = &manip_suite(Split::Seen, 1, 4)[0];
    let (state, _) = reset_low(task, task.seed).unwrap();
    println!("{}\nadditional_info: {}", task.instruction, additional_info(&state));

    let truth: Vec<_> = ground_truth_scene(&state).into_iter().map(|(c, s, _)| (c, s)).collect();
    let mut wrong = truth.clone();
    wrong.rotate_left(1);
    let cfg = RewardConfig::default();
    for (name, pred) in [("exact", &truth), ("rotated", &wrong)] {
        let q = matching_ratio(pred, &truth);
        println!("{name:<8} q = {q:.2}  behavior reward {:+.1}", behavior_reward_low(q, &cfg));
    }
}
