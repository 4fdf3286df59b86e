//! Supervised warm start on augmented MiniHouse trajectories followed by a
//! short PPO run. Prints the per-iteration metrics CSV and greedy success.
//!
//!     cargo run --release --example warm_start_then_ppo

use era_core::harness::{epl_policy, run_eval, ExperimentConfig};
use era_core::rl::{metrics_csv, train};
use era_core::types::Split;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.epl.episodes = 200;
    cfg.ppo.total_iters = 8;
    cfg.ppo.rollout_envs = Some(16);
    let (actor, _) = epl_policy(&cfg, 0).unwrap();
    let unseen = cfg.tasks(Split::Unseen, 50, 1).unwrap();
    let before = run_eval("epl", &actor, &unseen, Split::Unseen, &cfg.episode_options(0.0), 0).0;

    let seen = cfg.tasks(Split::Seen, cfg.tasks.train, 0).unwrap();
    let out = train(actor, None, &seen, &cfg.rl_config(), 0).unwrap();
    print!("{}", metrics_csv(&out.metrics));
    let after = run_eval("epl+rl", &out.actor, &unseen, Split::Unseen, &cfg.episode_options(0.0), 0).0;
    println!("unseen success: {:.2} after EPL, {:.2} after PPO", before.success_rate, after.success_rate);
}
