use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use era_core::context::ContextPolicy;
use era_core::harness::gradcheck::run_gradcheck;
use era_core::harness::{epl_policy, eval_csv, run_ablation_suite, run_cell, run_eval, ExperimentConfig, HarnessError, Suite};
use era_core::policy::Checkpoint;
use era_core::priors::{build_corpus, validate_corpus, write_jsonl, CorpusOptions, PriorKind, RecorderConfig};
use era_core::rl::{metrics_csv, train};
use era_core::types::{EnvKind, Split};

#[derive(Parser)]
#[command(name = "era", about = "Prior data, supervised warm start and PPO for two toy embodied environments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a prior corpus as JSONL.
    GenPriors {
        #[arg(long)]
        kind: PriorKind,
        #[arg(long)]
        env: EnvKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "ss1")]
        context: ContextPolicy,
        /// Per-step probability of an expert detour.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Supervised stage only; writes a checkpoint and the loss curve.
    EplTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// PPO from a checkpoint, or from the config's supervised stage.
    RlTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a checkpoint, or a full cell without one.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation grid (priors, context, reward, gae) over every seed.
    Ablate {
        suite: Suite,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), HarnessError> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), HarnessError> {
    ckpt.save(path).map_err(|e| HarnessError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.cmd {
        Cmd::GenPriors { kind, env, n, seed, out, context, noise } => {
            let opts = CorpusOptions { context, recorder: RecorderConfig { noise }, ..Default::default() };
            let data = build_corpus(kind, env, n, seed, &opts)?;
            let records: Vec<_> = data.iter().map(|s| s.record.clone()).collect();
            let report = validate_corpus(&records);
            write_jsonl(&out, &data)?;
            println!("{} {kind} samples -> {} ({} validation failures)", data.len(), out.display(), report.failures.len());
            Ok(report.failures.is_empty())
        }
        Cmd::EplTrain { config, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            std::fs::create_dir_all(&out)?;
            let (actor, reports) = epl_policy(&cfg, seed)?;
            let mut csv = String::from("phase,epoch,token_loss\n");
            for (p, r) in reports.iter().enumerate() {
                for (e, l) in r.epoch_token_loss.iter().enumerate() {
                    csv.push_str(&format!("{p},{e},{l}\n"));
                }
            }
            std::fs::write(out.join("epl_loss.csv"), csv)?;
            save(&out.join("checkpoint.json"), &Checkpoint::new(actor, None))?;
            write_json(&out.join("summary.json"), &json!({ "config": cfg, "seed": seed, "epl": reports }))?;
            println!("checkpoint -> {}", out.join("checkpoint.json").display());
            Ok(true)
        }
        Cmd::RlTrain { config, seed, init, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            std::fs::create_dir_all(&out)?;
            let (actor, critic) = match init {
                Some(p) => {
                    let c = Checkpoint::load(&p).map_err(|e| HarnessError::Config(e.to_string()))?;
                    (c.actor, c.critic)
                }
                None => (epl_policy(&cfg, seed)?.0, None),
            };
            let seen = cfg.tasks(Split::Seen, cfg.tasks.train, 0)?;
            let res = train(actor, critic, &seen, &cfg.rl_config(), seed)?;
            std::fs::write(out.join("train.csv"), metrics_csv(&res.metrics))?;
            let last = res.metrics.last().cloned();
            save(&out.join("checkpoint.json"), &Checkpoint::new(res.actor, Some(res.critic)))?;
            write_json(&out.join("summary.json"), &json!({ "config": cfg, "seed": seed, "final": last }))?;
            println!("{} iterations -> {}", res.metrics.len(), out.join("train.csv").display());
            Ok(true)
        }
        Cmd::Eval { config, checkpoint, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            std::fs::create_dir_all(&out)?;
            let rows = match checkpoint {
                Some(p) => {
                    let c = Checkpoint::load(&p).map_err(|e| HarnessError::Config(e.to_string()))?;
                    let mut rows = Vec::new();
                    for &split in &cfg.tasks.splits {
                        let tasks = cfg.tasks(split, cfg.tasks.eval, 1)?;
                        rows.push(run_eval(&cfg.name, &c.actor, &tasks, split, &cfg.episode_options(0.0), seed).0);
                    }
                    rows
                }
                None => run_cell(&cfg, seed)?.result.eval,
            };
            std::fs::write(out.join("eval.csv"), eval_csv(&rows))?;
            write_json(&out.join("summary.json"), &json!({ "config": cfg, "seed": seed, "eval": rows, "error_counts": "automated proxy" }))?;
            for r in &rows {
                println!("{} {}: success {:.3} over {} episodes", r.experiment, r.split, r.success_rate, r.episodes);
            }
            Ok(true)
        }
        Cmd::Ablate { suite, config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_ablation_suite(suite, &cfg, Some(&out))?;
            for s in &report.summary {
                println!("{suite}/{} {}: mean success {:.3} over {} seeds", s.cell, s.split, s.mean_success_rate, s.seeds);
            }
            println!("{} cells reused -> {}", report.reused, out.join(suite.to_string()).display());
            Ok(true)
        }
        Cmd::Gradcheck { instances, seed, out } => {
            let reports = run_gradcheck(instances, seed);
            for r in &reports {
                println!("{:<12} {:>4} instances  max rel err {:.2e}  {}", r.kind.name(), r.instances, r.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
            }
            if let Some(p) = out {
                write_json(&p, &json!(reports))?;
            }
            Ok(reports.iter().all(|r| r.passed()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
