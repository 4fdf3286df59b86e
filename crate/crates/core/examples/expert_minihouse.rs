//! Replays the scripted expert on a few MiniHouse tasks and prints what the
//! agent would see at each step.
//!
//!     cargo run --example expert_minihouse

use era_core::env_high::{expert_plan_high, reset, task_suite, MiniHouse};
use era_core::types::Split;

fn main() {
    for task in task_suite(Split::Seen, 3, 11) {
        println!("== {} ({} subgoals)", task.instruction, task.subgoals.len());
        let (state, _) = reset(&task, task.seed).unwrap();
        let plan = expert_plan_high(&task, &state).unwrap();
        let mut env = MiniHouse::new(task.clone(), task.seed).unwrap();
        println!("   {}", env.observe().text);
        for a in &plan {
            let out = env.step(Some(a));
            println!("-> {:<32} {}{}", a.to_string(), out.feedback.text, if out.success { "  [done]" } else { "" });
        }
    }
}
