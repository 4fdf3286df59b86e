//! Input size of the same expert episodes replayed under every context policy.

use era_core::context::{context_token_stats, ContextPolicy, EntryResponse, EpisodeLog, HistoryEntry};
use era_core::priors::{record_raw_trajectories, RecorderConfig};
use era_core::response::{Reflection, StructuredResponse};
use era_core::types::EnvKind;

fn main() {
    let eps = record_raw_trajectories(EnvKind::High, 20, 1, &RecorderConfig { noise: 0.2 }).unwrap();
    let logs: Vec<EpisodeLog> = eps
        .iter()
        .map(|ep| EpisodeLog {
            instruction: ep.instruction_tokens.clone(),
            observations: ep.steps.iter().map(|s| s.observation.clone()).collect(),
            entries: ep
                .steps
                .iter()
                .enumerate()
                .map(|(t, s)| HistoryEntry {
                    step_id: t as u32,
                    response: EntryResponse::Parsed(StructuredResponse::bare(Reflection::Continue, s.action.clone())),
                    feedback: s.feedback.clone(),
                })
                .collect(),
        })
        .collect();
    for p in ["none", "ss1", "ss3", "ss5", "sw1", "sw3", "sw5"] {
        let s = context_token_stats(&logs, &p.parse::<ContextPolicy>().unwrap());
        println!("{p:<5} mean {:7.1}  max {:4}", s.mean_input_tokens, s.max_input_tokens);
    }
}
