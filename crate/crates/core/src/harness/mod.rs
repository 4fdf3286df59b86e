//! Experiment runner: TOML configs, greedy evaluation, ablation suites and
//! their CSV/JSON outputs, and the gradient-check report.

pub mod gradcheck;
mod suite;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::ContextPolicy;
use crate::env_high::TaskSpec;
use crate::env_low::ManipTask;
use crate::policy::{epl_train, EplConfig, EplError, EplReport, NetConfig, PolicyParams, ValueParams};
use crate::priors::{build_corpus, mix, CorpusOptions, PriorError, PriorKind, PriorSample, RecorderConfig};
use crate::rewards::RewardConfig;
use crate::rl::{episode_stats, rollout_batch, stream_seed, task_pool, train, AnyTask, Episode, EpisodeOptions, GaeConfig, IterMetrics, PpoConfig, RlConfig, RlError};
use crate::types::{EnvKind, Split, Trajectory};

pub use suite::{run_ablation_suite, Suite, SuiteReport, RESULTS_HEADER};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Epl(#[from] EplError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which reward terms are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardPreset {
    Outcome,
    Subgoal,
    Behavior,
    Full,
}

impl RewardPreset {
    pub const ALL: [RewardPreset; 4] = [RewardPreset::Outcome, RewardPreset::Subgoal, RewardPreset::Behavior, RewardPreset::Full];

    pub fn config(self) -> RewardConfig {
        let (use_subgoal, use_behavior) = match self {
            RewardPreset::Outcome => (false, false),
            RewardPreset::Subgoal => (true, false),
            RewardPreset::Behavior => (false, true),
            RewardPreset::Full => (true, true),
        };
        RewardConfig { use_subgoal, use_behavior, ..Default::default() }
    }
}

impl fmt::Display for RewardPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardPreset::Outcome => "outcome",
            RewardPreset::Subgoal => "subgoal",
            RewardPreset::Behavior => "behavior",
            RewardPreset::Full => "full",
        })
    }
}

/// Prior-learning recipe run before RL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EplPreset {
    /// Random init, no supervised stage.
    None,
    Raw,
    TrajAug,
    /// Environment-anchored corpora first, then the augmented trajectories.
    Anchored,
}

impl EplPreset {
    pub const ALL: [EplPreset; 4] = [EplPreset::None, EplPreset::Raw, EplPreset::TrajAug, EplPreset::Anchored];
}

impl fmt::Display for EplPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EplPreset::None => "none",
            EplPreset::Raw => "raw",
            EplPreset::TrajAug => "traj-aug",
            EplPreset::Anchored => "anchored",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EplSection {
    pub preset: EplPreset,
    /// Expert episodes recorded for the trajectory corpus.
    pub episodes: usize,
    /// Probability of an expert detour per step.
    pub noise: f64,
    pub epochs: usize,
    /// Episodes (or grounding tasks) per anchored corpus.
    pub anchored_episodes: usize,
    pub anchored_epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for EplSection {
    fn default() -> Self {
        EplSection { preset: EplPreset::TrajAug, episodes: 300, noise: 0.1, epochs: 2, anchored_episodes: 300, anchored_epochs: 1, lr: 3e-3, batch: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    /// Seen tasks the RL stage samples from.
    pub train: usize,
    /// Tasks per evaluation split.
    pub eval: usize,
    pub splits: Vec<Split>,
    /// Seed of the generated task pools; shared by every cell and seed so
    /// that cells are compared on the same tasks.
    pub seed: u64,
    /// Optional JSON task lists that replace the generated pools.
    pub seen_file: Option<PathBuf>,
    pub unseen_file: Option<PathBuf>,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection { train: 200, eval: 100, splits: vec![Split::Seen, Split::Unseen], seed: 7, seen_file: None, unseen_file: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection { hidden: NetConfig::default().hidden }
    }
}

/// One experiment: an environment, a training recipe and a list of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvKind,
    pub seeds: Vec<u64>,
    pub context: ContextPolicy,
    pub reward: RewardPreset,
    pub gae: GaeConfig,
    pub epl: EplSection,
    /// `total_iters = 0` skips RL.
    pub ppo: PpoConfig,
    pub tasks: TaskSection,
    pub net: NetSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            env: EnvKind::High,
            seeds: vec![0],
            context: ContextPolicy::default(),
            reward: RewardPreset::Full,
            gae: GaeConfig::default(),
            epl: EplSection::default(),
            ppo: PpoConfig { rollout_envs: Some(32), total_iters: 15, ..Default::default() },
            tasks: TaskSection::default(),
            net: NetSection::default(),
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let c: ExperimentConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if self.net.hidden == 0 {
            return Err(HarnessError::Config("net.hidden must be positive".into()));
        }
        for f in [&self.tasks.seen_file, &self.tasks.unseen_file].into_iter().flatten() {
            if !f.exists() {
                return Err(HarnessError::Config(format!("task file {} does not exist", f.display())));
            }
        }
        self.rl_config().validate()?;
        Ok(())
    }

    pub fn rl_config(&self) -> RlConfig {
        RlConfig { gae: self.gae, ppo: self.ppo, reward: self.reward.config(), context: self.context }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig { hidden: self.net.hidden, ..Default::default() }
    }

    /// Short hash of everything except the name and the seed list.
    pub fn cell_hash(&self) -> String {
        let mut c = self.clone();
        c.name.clear();
        c.seeds.clear();
        let s = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(s.as_bytes()).iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Task pool of one split: the configured file if any, otherwise
    /// `n` generated tasks.
    pub fn tasks(&self, split: Split, n: usize, salt: u64) -> Result<Vec<AnyTask>, HarnessError> {
        let file = match split {
            Split::Seen => &self.tasks.seen_file,
            Split::Unseen => &self.tasks.unseen_file,
        };
        let tasks = match file {
            Some(p) => load_tasks(p, self.env)?,
            None => task_pool(self.env, split, n, self.tasks.seed.wrapping_add(salt)),
        };
        if tasks.is_empty() {
            return Err(HarnessError::Rl(RlError::NoTasks));
        }
        Ok(tasks)
    }

    pub fn episode_options(&self, temperature: f64) -> EpisodeOptions {
        EpisodeOptions { context: self.context, reward: self.reward.config(), mode: self.gae.mode, temperature }
    }
}

/// Reads a JSON array of tasks for `env`.
pub fn load_tasks(path: &Path, env: EnvKind) -> Result<Vec<AnyTask>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    Ok(match env {
        EnvKind::High => serde_json::from_str::<Vec<TaskSpec>>(&text)?.into_iter().map(AnyTask::High).collect(),
        EnvKind::Low => serde_json::from_str::<Vec<ManipTask>>(&text)?.into_iter().map(AnyTask::Low).collect(),
    })
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub seed: u64,
    pub split: Split,
    pub episodes: usize,
    pub success_rate: f64,
    pub subgoal_rate: f64,
    pub invalid_action_rate: f64,
    pub mean_q: Option<f64>,
    pub mean_input_tokens: f64,
    /// RL iterations behind the evaluated policy.
    pub iterations: usize,
    /// Automated error proxy, not a human taxonomy.
    pub errors: ErrorProxy,
    /// Seconds; kept out of the CSV so that files stay reproducible.
    pub wall_time: f64,
}

pub const EVAL_HEADER: &str = "experiment,seed,split,episodes,success_rate,subgoal_rate,invalid_action_rate,mean_q,mean_input_tokens,iterations,perception_errors,reasoning_errors,planning_errors";

impl MetricsRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.seed,
            self.split,
            self.episodes,
            self.success_rate,
            self.subgoal_rate,
            self.invalid_action_rate,
            self.mean_q.map(|q| q.to_string()).unwrap_or_default(),
            self.mean_input_tokens,
            self.iterations,
            self.errors.perception,
            self.errors.reasoning,
            self.errors.planning
        )
    }
}

pub fn eval_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Turn and episode counts of the automated error proxy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorProxy {
    /// Low-level turns whose scene description is not fully right.
    pub perception: usize,
    /// Failed episodes with no perception or planning error.
    pub reasoning: usize,
    /// Turns the simulator rejected.
    pub planning: usize,
}

pub fn error_proxy_counts<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> ErrorProxy {
    let mut e = ErrorProxy::default();
    for t in trajectories {
        let perception = t.turns.iter().filter(|x| x.q.is_some_and(|q| q < 1.0)).count();
        let planning = t.invalid_turns();
        e.perception += perception;
        e.planning += planning;
        if !t.success() && perception == 0 && planning == 0 {
            e.reasoning += 1;
        }
    }
    e
}

/// Greedy rollouts of `actor` on every task in `tasks`.
pub fn run_eval(
    experiment: &str,
    actor: &PolicyParams,
    tasks: &[AnyTask],
    split: Split,
    opts: &EpisodeOptions,
    seed: u64,
) -> (MetricsRow, Vec<Episode>) {
    let t0 = Instant::now();
    let opts = EpisodeOptions { temperature: 0.0, ..opts.clone() };
    let eps = rollout_batch(tasks, actor, None, &opts, stream_seed(seed, 3, split as u64));
    let s = episode_stats(&eps);
    let row = MetricsRow {
        experiment: experiment.to_string(),
        seed,
        split,
        episodes: s.episodes,
        success_rate: s.success_rate,
        subgoal_rate: s.subgoal_rate,
        invalid_action_rate: s.invalid_rate,
        mean_q: s.mean_q,
        mean_input_tokens: s.mean_input_tokens,
        iterations: 0,
        errors: error_proxy_counts(eps.iter().map(|e| &e.trajectory)),
        wall_time: t0.elapsed().as_secs_f64(),
    };
    (row, eps)
}

/// Corpus of the supervised stage, in training order: each inner vector is
/// one phase with its epoch count.
pub fn epl_phases(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(Vec<PriorSample>, usize)>, HarnessError> {
    let e = &cfg.epl;
    let opts = CorpusOptions { context: cfg.context, recorder: RecorderConfig { noise: e.noise }, ..Default::default() };
    let traj = |kind| build_corpus(kind, cfg.env, e.episodes, seed, &opts);
    Ok(match e.preset {
        EplPreset::None => Vec::new(),
        EplPreset::Raw => vec![(traj(PriorKind::RawTraj)?, e.epochs)],
        EplPreset::TrajAug => vec![(traj(PriorKind::TrajAug)?, e.epochs)],
        EplPreset::Anchored => {
            let kinds: &[PriorKind] = match cfg.env {
                EnvKind::High => &[PriorKind::MaskedAction, PriorKind::Reorder],
                EnvKind::Low => &[PriorKind::AbsGround, PriorKind::RelGround, PriorKind::CombGround],
            };
            let anchored = kinds
                .iter()
                .map(|&k| build_corpus(k, cfg.env, e.anchored_episodes, seed, &opts))
                .collect::<Result<Vec<_>, _>>()?;
            vec![(mix(anchored, seed), e.anchored_epochs), (traj(PriorKind::TrajAug)?, e.epochs)]
        }
    })
}

/// Fresh policy after the configured supervised stage, with one loss
/// report per phase.
pub fn epl_policy(cfg: &ExperimentConfig, seed: u64) -> Result<(PolicyParams, Vec<EplReport>), HarnessError> {
    let mut actor = PolicyParams::init(cfg.net_config(), seed);
    let mut reports = Vec::new();
    for (i, (data, epochs)) in epl_phases(cfg, seed)?.into_iter().enumerate() {
        let ec = EplConfig { epochs, lr: cfg.epl.lr, batch: cfg.epl.batch, seed: stream_seed(seed, 4, i as u64), ..Default::default() };
        reports.push(epl_train(&mut actor, &data, &ec)?);
    }
    Ok((actor, reports))
}

/// Everything one (config, seed) cell produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub train: Vec<IterMetrics>,
    pub eval: Vec<MetricsRow>,
}

pub struct CellRun {
    pub result: CellResult,
    pub actor: PolicyParams,
    pub critic: Option<ValueParams>,
}

/// Supervised stage, optional PPO on seen tasks, then greedy evaluation on
/// each configured split.
pub fn run_cell(cfg: &ExperimentConfig, seed: u64) -> Result<CellRun, HarnessError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let (mut actor, _) = epl_policy(cfg, seed)?;
    let (mut train_metrics, mut critic) = (Vec::new(), None);
    if cfg.ppo.total_iters > 0 {
        let seen = cfg.tasks(Split::Seen, cfg.tasks.train, 0)?;
        let out = train(actor, None, &seen, &cfg.rl_config(), seed)?;
        actor = out.actor;
        critic = Some(out.critic);
        train_metrics = out.metrics;
    }
    let mut eval = Vec::new();
    for &split in &cfg.tasks.splits {
        let tasks = cfg.tasks(split, cfg.tasks.eval, 1)?;
        let (mut row, _) = run_eval(&cfg.name, &actor, &tasks, split, &cfg.episode_options(0.0), seed);
        row.iterations = train_metrics.len();
        row.wall_time = t0.elapsed().as_secs_f64();
        eval.push(row);
    }
    let result = CellResult { experiment: cfg.name.clone(), config_hash: cfg.cell_hash(), seed, train: train_metrics, eval };
    Ok(CellRun { result, actor, critic })
}

/// Deterministic RNG for harness-level sampling.
pub fn harness_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, 5, stream))
}

#[cfg(test)]
mod tests;
