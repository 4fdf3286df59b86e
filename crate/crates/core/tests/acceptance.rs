//! Acceptance checks. Each criterion prints one PASS/FAIL line to stderr
//! (uncaptured), and the test fails if any criterion fails.
//!
//!     cargo test --release --test acceptance

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use era_core::context::{context_token_stats, ContextPolicy, EpisodeLog};
use era_core::env_high::{all_combos, expert_plan_high, reset, task_suite, TaskSpec};
use era_core::env_low::{expert_plan_low, ground_truth_scene, manip_suite, reset_low, step_low};
use era_core::harness::gradcheck::run_gradcheck;
use era_core::harness::{epl_policy, run_ablation_suite, run_cell, EplPreset, ExperimentConfig, RewardPreset, Suite};
use era_core::policy::PolicyParams;
use era_core::priors::alfred::{execute_mapped, map_alfred_text};
use era_core::priors::anchored::{reinsert_masked, reorder_actions};
use era_core::priors::{gen_masked_action, gen_reorder, gen_visual_description, ActionSeq, AlfredContext};
use era_core::response::{describe_visual, ResponseAction, VisualEntry};
use era_core::rewards::*;
use era_core::rl::{gae_turn, gae_turn_sum, metrics_csv, rollout_batch, task_pool, td_residuals, EpisodeOptions, GaeMode};
use era_core::types::{EnvKind, Feedback, FeedbackCode, Split};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. GAE oracle.

fn gae_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=10);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (g, l) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
        let d = td_residuals(&r, &v, g).unwrap();
        for (a, b) in gae_turn(&d, g, l).iter().zip(gae_turn_sum(&d, g, l)) {
            worst = worst.max((a - b).abs());
        }
        ensure(gae_turn(&d, g, 0.0) == d, || "lambda = 0 does not reduce to the TD residuals".into())?;
        let zero = vec![0.0; n];
        let mut rtg = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            acc += r[t];
            rtg[t] = acc;
        }
        ensure(gae_turn(&td_residuals(&r, &zero, 1.0).unwrap(), 1.0, 1.0) == rtg, || "gamma = lambda = 1, V = 0 is not reward-to-go".into())?;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(worst <= 1e-10, || format!("recursion vs sum differs by {worst:e}"))?;
    ensure(secs < 1.0, || format!("took {secs:.2}s"))?;
    Ok(format!("1000 trajectories, max |recursion - sum| = {worst:.1e}, {secs:.3}s"))
}

// ---------------------------------------------------------------------------
// 2. Gradients.

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let reports = run_gradcheck(100, 2024);
    let secs = t0.elapsed().as_secs_f64();
    let summary: Vec<String> = reports.iter().map(|r| format!("{} {:.1e}", r.kind.name(), r.max_rel_error)).collect();
    ensure(reports.iter().all(|r| r.passed() && r.instances >= 100), || summary.join(", "))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("100 instances each: {} ({secs:.1}s)", summary.join(", ")))
}

// ---------------------------------------------------------------------------
// 3. Reward table.

fn small_policy(env: EnvKind, seed: u64) -> PolicyParams {
    let mut cfg = ExperimentConfig { env, ..Default::default() };
    cfg.epl.episodes = 40;
    cfg.epl.epochs = 1;
    epl_policy(&cfg, seed).unwrap().0
}

fn reward_table() -> Outcome {
    let c = RewardConfig::default();
    ensure(success_reward(true, EnvKind::High, &c) == 4.0 && success_reward(true, EnvKind::Low, &c) == 3.0, || "success values".into())?;
    let bad = Feedback::invalid(FeedbackCode::NotNear, "x");
    ensure(behavior_reward_high(&bad, &c) == -0.5 && behavior_reward_high(&Feedback::ok(EnvKind::High), &c) == 0.0, || "invalid penalty".into())?;
    let q_rewards = [(1.0, 0.5), (0.76, 0.5), (0.75, 0.0), (0.5, 0.0), (0.25, 0.0), (0.24, -0.5), (0.0, -0.5)];
    for (q, want) in q_rewards {
        ensure(behavior_reward_low(q, &c) == want, || format!("q = {q} gives {}", behavior_reward_low(q, &c)))?;
    }

    // First-time-only subgoals, and an unparsable low-level response.
    let task = &manip_suite(Split::Seen, 1, 3)[0];
    let (s0, _) = reset_low(task, task.seed).unwrap();
    let plan = expert_plan_low(task, &s0).unwrap();
    let mut ledger = SubgoalLedger::default();
    let targets = task.target_objects();
    let (s1, _) = step_low(&s0, task, Some(&plan[0]));
    let first = subgoal_reward_low(&s1, &targets, &mut ledger, &c);
    let again = subgoal_reward_low(&s1, &targets, &mut ledger, &c);
    ensure(first == 1.0 && again == 0.0, || format!("subgoal rewards {first} then {again}"))?;
    let unparsable = Err(era_core::response::ParseFailure::Empty);
    let (r, q) = turn_reward_low(&unparsable, &s0, &s0, false, &targets, &mut SubgoalLedger::default(), &c);
    ensure(q == 0.0 && r.behavior == -1.0, || format!("unparsable: q {q}, behavior {}", r.behavior))?;

    // Composite = components on every turn of 100 sampled episodes.
    let mut turns = 0;
    for env in [EnvKind::High, EnvKind::Low] {
        let actor = small_policy(env, 5);
        let tasks = task_pool(env, Split::Seen, 50, 21);
        let opts = EpisodeOptions { context: ContextPolicy::default(), reward: c.clone(), mode: GaeMode::TurnLevel, temperature: 1.0 };
        for ep in rollout_batch(&tasks, &actor, None, &opts, 9) {
            let tr = &ep.trajectory;
            let mut sum = 0.0;
            for (i, t) in tr.turns.iter().enumerate() {
                let b = &t.reward;
                ensure(b.total == b.success + b.subgoal + b.behavior, || format!("turn total {b:?}"))?;
                let last = i + 1 == tr.turns.len();
                let succ = match env {
                    EnvKind::High => 4.0,
                    EnvKind::Low => 3.0,
                };
                ensure(b.success == 0.0 || (last && tr.success() && b.success == succ), || format!("success reward {b:?}"))?;
                ensure(b.subgoal >= 0.0 && b.subgoal.fract() == 0.0, || format!("subgoal reward {b:?}"))?;
                let allowed: &[f64] = match env {
                    EnvKind::High => &[0.0, -0.5],
                    EnvKind::Low => &[0.5, 0.0, -0.5, -1.0],
                };
                ensure(allowed.contains(&b.behavior), || format!("behavior reward {b:?}"))?;
                sum += b.total;
                turns += 1;
            }
            let granted: f64 = tr.turns.iter().map(|t| t.reward.subgoal).sum();
            ensure(granted <= tr.num_subgoals as f64, || "subgoal rewarded twice".into())?;
            ensure((tr.episode_return - sum).abs() < 1e-12, || "episode return is not the turn sum".into())?;
        }
    }
    Ok(format!("table values exact; {turns} fuzzed turns over 100 episodes consistent"))
}

// ---------------------------------------------------------------------------
// 4. Action mapping.

fn action_mapping() -> Outcome {
    let map = |a: &str, ctx: &mut AlfredContext| map_alfred_text(a, ctx).unwrap();
    let mut ctx = AlfredContext::default();
    let rows: [(&str, &[&str]); 5] = [
        ("GotoLocation(Fridge)", &["find a Fridge"]),
        ("PickupObject(Apple)", &["pick up the Apple"]),
        ("SliceObject(Bread)", &["slice the Bread"]),
        ("NoOp()", &[]),
        (
            "CleanObject(Mug)",
            &["put down the object in hand", "find a Faucet", "turn on the Faucet", "turn off the Faucet", "find a Mug", "pick up the Mug"],
        ),
    ];
    for (a, want) in rows {
        ensure(map(a, &mut ctx) == want, || format!("{a} -> {:?}", map(a, &mut AlfredContext::default())))?;
    }
    let cool = [
        "open the Fridge",
        "put down the object in hand",
        "close the Fridge",
        "open the Fridge",
        "find a Egg",
        "pick up the Egg",
        "close the Fridge",
    ];
    ensure(map("CoolObject(Egg)", &mut AlfredContext::default()) == cool, || "CoolObject row".into())?;
    let heat = [
        "open the Microwave",
        "put down the object in hand",
        "close the Microwave",
        "turn on the Microwave",
        "turn off the Microwave",
        "open the Microwave",
        "find a Potato",
        "pick up the Potato",
        "close the Microwave",
    ];
    ensure(map("HeatObject(Potato)", &mut AlfredContext::default()) == heat, || "HeatObject row".into())?;
    let mut closed = AlfredContext { closed: ["Fridge".to_string()].into(), ..Default::default() };
    ensure(map("PutObject(Apple, Fridge)", &mut closed) == ["open the Fridge", "put down the object in hand"], || "PutObject closed".into())?;
    ensure(map("PutObject(Apple, Fridge)", &mut closed) == ["put down the object in hand"], || "PutObject open".into())?;
    let mut t = AlfredContext::default();
    let toggles: Vec<Vec<String>> = (0..3).map(|_| map("ToggleObject(DeskLamp)", &mut t)).collect();
    ensure(toggles == [vec!["turn on the DeskLamp"], vec!["turn off the DeskLamp"], vec!["turn on the DeskLamp"]], || "ToggleObject state".into())?;

    let mut sequences = 0;
    let mut actions = 0;
    for (i, (tpl, o, d)) in all_combos().into_iter().enumerate() {
        for s in 0..3u64 {
            let seed = i as u64 * 3 + s;
            let task = TaskSpec::new(tpl, o, d, 0, seed).unwrap();
            let ex = execute_mapped(&task, seed);
            ensure(ex.all_valid() && ex.goal_reached, || format!("{task:?}: {:?}", ex.invalid))?;
            sequences += 1;
            actions += ex.actions.len();
        }
    }
    Ok(format!("table rows byte-exact; {sequences} mapped sequences ({actions} actions) 100% valid"))
}

// ---------------------------------------------------------------------------
// 5. Context accounting.

fn context_accounting() -> Outcome {
    // O(1) input under SS(1): an untrained policy runs every episode to the
    // 30-step limit.
    let untrained = PolicyParams::init(Default::default(), 3);
    let tasks = task_pool(EnvKind::High, Split::Seen, 20, 5);
    let ss1 = ContextPolicy::self_summarization(1);
    let opts = EpisodeOptions { context: ss1, reward: RewardConfig::default(), mode: GaeMode::TurnLevel, temperature: 1.0 };
    let eps = rollout_batch(&tasks, &untrained, None, &opts, 4);
    let at = |t: usize| eps.iter().filter_map(|e| e.trajectory.turns.get(t)).map(|x| x.state_input.len()).max().unwrap_or(0);
    ensure(eps.iter().all(|e| e.trajectory.turns.len() == 30), || "episodes did not reach turn 30".into())?;
    let (m2, m30) = (at(1), at(29));
    // One history entry differs by at most its response and feedback.
    let bound = era_core::response::MAX_RESPONSE_TOKENS + 16;
    ensure(m30.abs_diff(m2) <= bound, || format!("turn 2 max {m2}, turn 30 max {m30}"))?;

    // Orderings on 50 evaluation episodes replayed under each policy.
    let mut cfg = ExperimentConfig::default();
    cfg.epl.episodes = 150;
    let actor = epl_policy(&cfg, 0).unwrap().0;
    let eval = task_pool(EnvKind::High, Split::Unseen, 50, 8);
    let opts = EpisodeOptions { temperature: 0.0, ..cfg.episode_options(0.0) };
    let logs: Vec<EpisodeLog> = rollout_batch(&eval, &actor, None, &opts, 0).into_iter().map(|e| e.log).collect();
    let mean = |p: &str| context_token_stats(&logs, &p.parse::<ContextPolicy>().unwrap()).mean_input_tokens;
    let names = ["none", "ss1", "ss3", "ss5", "sw1", "sw3", "sw5"];
    let m: Vec<f64> = names.iter().map(|p| mean(p)).collect();
    let shown = names.iter().zip(&m).map(|(n, v)| format!("{n} {v:.1}")).collect::<Vec<_>>().join(", ");
    ensure(m[0] < m[1] && m[1] < m[2] && m[2] < m[3], || format!("SS ordering: {shown}"))?;
    ensure(m[4] < m[1] && m[5] < m[2] && m[6] < m[3], || format!("SW < SS: {shown}"))?;
    Ok(format!("SS(1) max input turn 2 {m2} vs turn 30 {m30}; means {shown}"))
}

// ---------------------------------------------------------------------------
// 6. Data inverses.

fn action_seqs(rng: &mut ChaCha8Rng) -> ActionSeq {
    if rng.gen_bool(0.5) {
        let t = &task_suite(Split::Seen, 1, rng.gen())[0];
        let (s, _) = reset(t, t.seed).unwrap();
        let actions = expert_plan_high(t, &s).unwrap().into_iter().map(ResponseAction::High).collect();
        ActionSeq { env: EnvKind::High, instruction: t.instruction.clone(), instruction_tokens: t.instruction_tokens(), actions }
    } else {
        let t = &manip_suite(Split::Seen, 1, rng.gen())[0];
        let (s, _) = reset_low(t, t.seed).unwrap();
        let actions = expert_plan_low(t, &s).unwrap().into_iter().map(ResponseAction::Low).collect();
        ActionSeq { env: EnvKind::Low, instruction: t.instruction.clone(), instruction_tokens: t.instruction_tokens(), actions }
    }
}

fn data_inverses() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10_000;
    for i in 0..n {
        let seq = action_seqs(&mut rng);
        let qa = gen_masked_action(&seq, &mut rng).ok_or("masked generation failed")?;
        ensure(reinsert_masked(&qa.query, &qa.answer, seq.env).as_ref() == Some(&seq.actions), || format!("masked sample {i}"))?;
        let qa = gen_reorder(&seq, &mut rng).ok_or("reorder generation failed")?;
        let (shown, answer) = reorder_actions(&qa.query, &qa.answer, seq.env).ok_or("reorder decode failed")?;
        let key = |a: &ResponseAction| serde_json::to_string(a).unwrap();
        let (mut a, mut b): (Vec<String>, Vec<String>) = (shown.iter().map(key).collect(), answer.iter().map(key).collect());
        a.sort();
        b.sort();
        ensure(a == b, || format!("reorder sample {i} is not a permutation"))?;
        let start: usize = qa.detail.split(':').next().unwrap().parse().unwrap();
        ensure(answer[..] == seq.actions[start..start + answer.len()], || format!("reorder sample {i} does not recover the order"))?;
    }
    let mut scenes = 0;
    for seed in 0..2000u64 {
        let task = &manip_suite(Split::Seen, 1, seed)[0];
        let (mut s, _) = reset_low(task, seed).unwrap();
        for a in expert_plan_low(task, &s).unwrap() {
            let truth: Vec<VisualEntry> =
                ground_truth_scene(&s).into_iter().map(|(color, shape, coord)| VisualEntry { color, shape, coord }).collect();
            let text = gen_visual_description(&s);
            ensure(text == describe_visual(&truth), || format!("scene {seed}: {text}"))?;
            scenes += 1;
            s = step_low(&s, task, Some(&a)).0;
        }
    }
    Ok(format!("{n} masked and {n} reorder samples invert; {scenes} scene descriptions match"))
}

// ---------------------------------------------------------------------------
// 7. Directional comparisons over five seeds.

fn config(file: &str) -> ExperimentConfig {
    ExperimentConfig::load(std::path::Path::new(&format!("{}/../../configs/{file}", env!("CARGO_MANIFEST_DIR")))).unwrap()
}

/// Per-seed success rates of `cfg` on `split`.
fn success(cfg: &ExperimentConfig, split: Split) -> Vec<f64> {
    cfg.seeds
        .par_iter()
        .map(|&s| run_cell(cfg, s).unwrap().result.eval.iter().find(|m| m.split == split).unwrap().success_rate)
        .collect()
}

fn at_least(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x >= y).count()
}

fn rates(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
}

fn directional() -> Outcome {
    let high = config("minihouse.toml");
    let low = config("minitable.toml");
    let with = |base: &ExperimentConfig, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    let mut judge = |id: &str, wins: usize, detail: String| {
        lines.push(format!("7{id} {wins}/5 [{detail}]"));
        if wins < 4 {
            failed.push(id.to_string());
        }
    };

    let full_seen = success(&high, Split::Seen);
    let full_unseen = success(&high, Split::Unseen);
    let scratch = success(&with(&high, &|c| c.epl.preset = EplPreset::None), Split::Seen);
    let wins = scratch.iter().zip(&full_seen).filter(|(s, e)| **s <= 0.05 && **e > 0.70).count();
    judge("a", wins, format!("scratch {} vs warm start {}", rates(&scratch), rates(&full_seen)));

    let outcome = success(&with(&high, &|c| c.reward = RewardPreset::Outcome), Split::Unseen);
    judge("b", at_least(&full_unseen, &outcome), format!("full {} vs outcome {}", rates(&full_unseen), rates(&outcome)));

    let token_high = success(&with(&high, &|c| c.gae.mode = GaeMode::TokenLevel), Split::Unseen);
    let turn_low = success(&low, Split::Unseen);
    let token_low = success(&with(&low, &|c| c.gae.mode = GaeMode::TokenLevel), Split::Unseen);
    let both = full_unseen.iter().zip(&token_high).zip(turn_low.iter().zip(&token_low)).filter(|((a, b), (c, d))| a >= b && c >= d).count();
    judge(
        "c",
        both,
        format!("high turn {} vs token {}; low turn {} vs token {}", rates(&full_unseen), rates(&token_high), rates(&turn_low), rates(&token_low)),
    );

    let epl_only = with(&high, &|c| c.ppo.total_iters = 0);
    let raw = success(&with(&epl_only, &|c| c.epl.preset = EplPreset::Raw), Split::Unseen);
    let aug = success(&with(&epl_only, &|c| c.epl.preset = EplPreset::TrajAug), Split::Unseen);
    judge("d", at_least(&aug, &raw), format!("traj-aug {} vs raw {}", rates(&aug), rates(&raw)));

    let text = lines.join("; ");
    if failed.is_empty() {
        Ok(text)
    } else {
        Err(format!("{} below 4/5: {text}", failed.join(",")))
    }
}

// ---------------------------------------------------------------------------
// 8. Determinism.

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig { env: EnvKind::Low, seeds: vec![3], ..Default::default() };
    cfg.epl.episodes = 30;
    cfg.ppo.total_iters = 4;
    cfg.ppo.rollout_envs = Some(8);
    cfg.tasks.eval = 20;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_ablation_suite(Suite::Gae, &cfg, None).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    let train = |r: &era_core::harness::SuiteReport| r.cells.iter().map(|(_, c)| metrics_csv(&c.train)).collect::<Vec<_>>();
    ensure(a.results_csv() == b.results_csv() && train(&a) == train(&b), || "repeat run differs".into())?;
    ensure(a.results_csv() == c.results_csv() && train(&a) == train(&c), || "thread count changes results".into())?;
    Ok(format!("{} cells bit-identical across repeats and thread counts", a.cells.len()))
}

// ---------------------------------------------------------------------------

fn run(id: &str, f: fn() -> Outcome) -> bool {
    let t0 = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = t0.elapsed().as_secs_f64();
    let line = match &res {
        Ok(m) => format!("criterion {id}: PASS ({secs:.1}s) {m}"),
        Err(m) => format!("criterion {id}: FAIL ({secs:.1}s) {m}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    res.is_ok()
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Outcome); 8] = [
        ("1 gae-oracle", gae_oracle),
        ("2 gradients", gradients),
        ("3 reward-table", reward_table),
        ("4 action-mapping", action_mapping),
        ("5 context-accounting", context_accounting),
        ("6 data-inverses", data_inverses),
        ("7 directional", directional),
        ("8 determinism", determinism),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(id, f)| !run(id, *f)).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
