use super::*;
use crate::types::{Feedback, FeedbackCode, Terminal, Turn};

fn tiny(env: EnvKind) -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        env,
        seeds: vec![0],
        epl: EplSection { episodes: 4, anchored_episodes: 2, epochs: 1, ..Default::default() },
        ppo: PpoConfig { rollout_envs: Some(3), total_iters: 2, minibatch: 8, critic_warmup_iters: 1, ..Default::default() },
        tasks: TaskSection { train: 5, eval: 3, ..Default::default() },
        net: NetSection { hidden: 8 },
        ..Default::default()
    }
}

#[test]
fn config_round_trips_through_toml() {
    let c = tiny(EnvKind::Low);
    let back: ExperimentConfig = c.to_toml().parse().unwrap();
    assert_eq!(back, c);
}

#[test]
fn config_reads_short_names() {
    let c: ExperimentConfig = r#"
        env = "low"
        seeds = [1, 2]
        context = "sw3"
        reward = "subgoal"
        [gae]
        mode = "token"
        [epl]
        preset = "raw"
    "#
    .parse()
    .unwrap();
    assert_eq!(c.context, ContextPolicy::sliding_window(3));
    assert_eq!(c.reward, RewardPreset::Subgoal);
    assert_eq!(c.gae.mode, crate::rl::GaeMode::TokenLevel);
    assert_eq!(c.epl.preset, EplPreset::Raw);
}

#[test]
fn config_rejects_bad_input() {
    assert!("seeds = []".parse::<ExperimentConfig>().is_err());
    assert!("bogus = 1".parse::<ExperimentConfig>().is_err());
    assert!("context = \"ss0\"".parse::<ExperimentConfig>().is_err());
    assert!("[tasks]\nseen_file = \"/no/such/file.json\"".parse::<ExperimentConfig>().is_err());
    assert!("[ppo]\nclip_eps = 0.0".parse::<ExperimentConfig>().is_err());
}

#[test]
fn reward_presets_toggle_terms() {
    let o = RewardPreset::Outcome.config();
    assert!(!o.use_subgoal && !o.use_behavior);
    assert_eq!(RewardPreset::Full.config(), RewardConfig::default());
    assert!(RewardPreset::Subgoal.config().use_subgoal && !RewardPreset::Subgoal.config().use_behavior);
}

#[test]
fn cell_hash_ignores_name_and_seeds() {
    let a = tiny(EnvKind::High);
    let mut b = a.clone();
    b.name = "other".into();
    b.seeds = vec![9, 10];
    assert_eq!(a.cell_hash(), b.cell_hash());
    b.reward = RewardPreset::Outcome;
    assert_ne!(a.cell_hash(), b.cell_hash());
}

#[test]
fn task_files_replace_generated_pools() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = crate::env_high::task_suite(Split::Unseen, 2, 3);
    let path = dir.path().join("unseen.json");
    std::fs::write(&path, serde_json::to_string(&tasks).unwrap()).unwrap();
    let mut c = tiny(EnvKind::High);
    c.tasks.unseen_file = Some(path);
    let got = c.tasks(Split::Unseen, 50, 1).unwrap();
    assert_eq!(got, tasks.into_iter().map(AnyTask::High).collect::<Vec<_>>());
}

fn turn(valid: bool, q: Option<f64>) -> Turn {
    Turn {
        state_input: vec![],
        response: vec![],
        parsed: Err(crate::response::ParseFailure::Empty),
        feedback: if valid { Feedback::ok(EnvKind::High) } else { Feedback::invalid(FeedbackCode::NotNear, "x") },
        reward: Default::default(),
        q,
        turn_value: 0.0,
        token_values: vec![],
        advantage: 0.0,
    }
}

#[test]
fn error_proxy_counts_follow_definitions() {
    let ok = Trajectory::new(vec![turn(true, None), turn(true, None)], Terminal::Success, 1, 1);
    assert_eq!(error_proxy_counts([&ok]), ErrorProxy::default());
    let planning = Trajectory::new(vec![turn(false, None), turn(true, None)], Terminal::Success, 1, 1);
    assert_eq!(error_proxy_counts([&planning]).planning, 1);
    let perception = Trajectory::new(vec![turn(true, Some(0.5)), turn(true, Some(1.0))], Terminal::StepLimit, 1, 0);
    assert_eq!(error_proxy_counts([&perception]), ErrorProxy { perception: 1, reasoning: 0, planning: 0 });
    let reasoning = Trajectory::new(vec![turn(true, None)], Terminal::StepLimit, 1, 0);
    assert_eq!(error_proxy_counts([&reasoning]).reasoning, 1);
    let all = [ok, planning, perception, reasoning];
    let e = error_proxy_counts(&all);
    let turns: usize = all.iter().map(|t| t.turns.len()).sum();
    assert!(e.perception + e.planning + e.reasoning <= turns + all.len());
}

#[test]
fn untrained_policy_fails_and_eval_is_deterministic() {
    let mut c = tiny(EnvKind::High);
    c.epl.preset = EplPreset::None;
    c.ppo.total_iters = 0;
    let a = run_cell(&c, 3).unwrap().result;
    let b = run_cell(&c, 3).unwrap().result;
    assert_eq!(a.eval.iter().map(|r| r.success_rate).collect::<Vec<_>>(), vec![0.0, 0.0]);
    let strip = |r: &CellResult| r.eval.iter().map(|m| MetricsRow { wall_time: 0.0, ..m.clone() }).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn epl_presets_build_the_expected_phases() {
    for env in [EnvKind::High, EnvKind::Low] {
        let mut c = tiny(env);
        for p in EplPreset::ALL {
            c.epl.preset = p;
            let phases = epl_phases(&c, 1).unwrap();
            let want = match p {
                EplPreset::None => 0,
                EplPreset::Raw | EplPreset::TrajAug => 1,
                EplPreset::Anchored => 2,
            };
            assert_eq!(phases.len(), want, "{p}");
            assert!(phases.iter().all(|(d, _)| !d.is_empty()));
        }
    }
}

#[test]
fn suites_expand_the_documented_grids() {
    let base = tiny(EnvKind::High);
    let names = |s: Suite| s.cells(&base).into_iter().map(|(n, _)| n).collect::<Vec<_>>();
    assert_eq!(names(Suite::Reward), ["outcome", "subgoal", "behavior", "full"]);
    assert_eq!(names(Suite::Gae), ["turn", "token"]);
    assert_eq!(names(Suite::Context), ["none", "ss1", "ss3", "ss5", "sw1", "sw3", "sw5"]);
    assert_eq!(names(Suite::Priors), ["none", "raw", "traj-aug", "anchored"]);
}

#[test]
fn suite_is_idempotent_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(EnvKind::Low);
    let first = run_ablation_suite(Suite::Gae, &base, Some(dir.path())).unwrap();
    assert_eq!(first.reused, 0);
    let csv = std::fs::read_to_string(dir.path().join("gae/results.csv")).unwrap();
    let train = std::fs::read(dir.path().join("gae/token/seed0/train.csv")).unwrap();
    assert!(csv.starts_with(RESULTS_HEADER));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);

    let again = run_ablation_suite(Suite::Gae, &base, Some(dir.path())).unwrap();
    assert_eq!(again.reused, 2);
    assert_eq!(again.results_csv(), csv);

    let fresh = tempfile::tempdir().unwrap();
    let rerun = run_ablation_suite(Suite::Gae, &base, Some(fresh.path())).unwrap();
    assert_eq!(rerun.reused, 0);
    assert_eq!(rerun.results_csv(), csv);
    assert_eq!(std::fs::read(fresh.path().join("gae/token/seed0/train.csv")).unwrap(), train);
}

#[test]
fn gradcheck_runner_passes_a_few_instances() {
    for r in gradcheck::run_gradcheck(3, 11) {
        assert!(r.passed(), "{:?}", r);
    }
}
