//! Ablation grids over a base config.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_cell, CellResult, EplPreset, ExperimentConfig, HarnessError, MetricsRow, RewardPreset};
use crate::context::ContextPolicy;
use crate::rl::{metrics_csv, GaeMode};
use crate::types::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Priors,
    Context,
    Reward,
    Gae,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Priors => "priors",
            Suite::Context => "context",
            Suite::Reward => "reward",
            Suite::Gae => "gae",
        })
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "priors" => Ok(Suite::Priors),
            "context" => Ok(Suite::Context),
            "reward" => Ok(Suite::Reward),
            "gae" => Ok(Suite::Gae),
            _ => Err(format!("unknown suite {s:?} (expected priors, context, reward or gae)")),
        }
    }
}

impl Suite {
    /// Named cells of the grid, each a copy of `base` with one field changed.
    pub fn cells(self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let with = |name: String, f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            c.name = format!("{}/{}", self, name);
            f(&mut c);
            (name, c)
        };
        match self {
            Suite::Priors => EplPreset::ALL.iter().map(|&p| with(p.to_string(), &|c| c.epl.preset = p)).collect(),
            Suite::Context => {
                let mut ps = vec![ContextPolicy::NONE];
                ps.extend([1, 3, 5].map(ContextPolicy::self_summarization));
                ps.extend([1, 3, 5].map(ContextPolicy::sliding_window));
                ps.into_iter().map(|p| with(p.to_string(), &|c| c.context = p)).collect()
            }
            Suite::Reward => RewardPreset::ALL.iter().map(|&r| with(r.to_string(), &|c| c.reward = r)).collect(),
            Suite::Gae => {
                [GaeMode::TurnLevel, GaeMode::TokenLevel].iter().map(|&m| with(m.to_string(), &|c| c.gae.mode = m)).collect()
            }
        }
    }
}

/// `suite,cell,config_hash` followed by the evaluation columns.
pub const RESULTS_HEADER: &str = "suite,cell,config_hash,experiment,seed,split,episodes,success_rate,subgoal_rate,invalid_action_rate,mean_q,mean_input_tokens,iterations,perception_errors,reasoning_errors,planning_errors";

fn results_row(suite: Suite, cell: &str, hash: &str, r: &MetricsRow) -> String {
    format!("{suite},{cell},{hash},{}", r.csv_row())
}

/// Seed-averaged view of one cell on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub split: Split,
    pub seeds: usize,
    pub mean_success_rate: f64,
    pub success_rates: Vec<f64>,
    pub mean_input_tokens: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    /// `(cell name, result)` in grid order, seeds innermost.
    pub cells: Vec<(String, CellResult)>,
    pub summary: Vec<CellSummary>,
    /// Cells loaded from a previous run instead of recomputed.
    pub reused: usize,
}

impl SuiteReport {
    pub fn results_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for (cell, r) in &self.cells {
            for row in &r.eval {
                s.push_str(&results_row(self.suite, cell, &r.config_hash, row));
                s.push('\n');
            }
        }
        s
    }

    /// Success rates of `cell` on `split`, one per seed.
    pub fn success(&self, cell: &str, split: Split) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|(c, _)| c == cell)
            .flat_map(|(_, r)| r.eval.iter().filter(|m| m.split == split).map(|m| m.success_rate))
            .collect()
    }
}

fn summarize(cells: &[(String, CellResult)]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    for (cell, r) in cells {
        for m in &r.eval {
            let i = match out.iter().position(|s| &s.cell == cell && s.split == m.split) {
                Some(i) => i,
                None => {
                    out.push(CellSummary {
                        cell: cell.clone(),
                        split: m.split,
                        seeds: 0,
                        mean_success_rate: 0.0,
                        success_rates: Vec::new(),
                        mean_input_tokens: 0.0,
                        wall_time: 0.0,
                    });
                    out.len() - 1
                }
            };
            let s = &mut out[i];
            s.seeds += 1;
            s.success_rates.push(m.success_rate);
            s.mean_input_tokens += m.mean_input_tokens;
            s.wall_time += m.wall_time;
        }
    }
    for s in &mut out {
        let n = s.seeds.max(1) as f64;
        s.mean_success_rate = s.success_rates.iter().sum::<f64>() / n;
        s.mean_input_tokens /= n;
    }
    out
}

fn load_cached(path: &Path, hash: &str) -> Option<CellResult> {
    let r: CellResult = serde_json::from_slice(&std::fs::read(path).ok()?).ok()?;
    (r.config_hash == hash).then_some(r)
}

/// Runs every cell of `suite` for every seed of `base`. With `out` set, each
/// cell writes `<out>/<suite>/<cell>/seed<k>/{train.csv,cell.json}` and is
/// skipped on a later call if `cell.json` already holds the same config hash;
/// the suite writes `results.csv` and `summary.json` next to the cells.
pub fn run_ablation_suite(suite: Suite, base: &ExperimentConfig, out: Option<&Path>) -> Result<SuiteReport, HarnessError> {
    base.validate()?;
    let jobs: Vec<(String, ExperimentConfig, u64)> = suite
        .cells(base)
        .into_iter()
        .flat_map(|(name, c)| base.seeds.iter().map(move |&s| (name.clone(), c.clone(), s)))
        .collect();
    let dir = out.map(|o| o.join(suite.to_string()));
    let done: Vec<Result<(String, CellResult, bool), HarnessError>> = jobs
        .par_iter()
        .map(|(name, cfg, seed)| {
            let cell_dir = dir.as_ref().map(|d| d.join(name).join(format!("seed{seed}")));
            if let Some(d) = &cell_dir {
                if let Some(r) = load_cached(&d.join("cell.json"), &cfg.cell_hash()) {
                    return Ok((name.clone(), r, true));
                }
            }
            let r = run_cell(cfg, *seed)?.result;
            if let Some(d) = &cell_dir {
                std::fs::create_dir_all(d)?;
                std::fs::write(d.join("train.csv"), metrics_csv(&r.train))?;
                std::fs::write(d.join("cell.json"), serde_json::to_vec_pretty(&r)?)?;
            }
            Ok((name.clone(), r, false))
        })
        .collect();
    let mut cells = Vec::with_capacity(done.len());
    let mut reused = 0;
    for d in done {
        let (name, r, cached) = d?;
        reused += cached as usize;
        cells.push((name, r));
    }
    let report = SuiteReport { suite, summary: summarize(&cells), cells, reused };
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
        std::fs::write(d.join("results.csv"), report.results_csv())?;
        std::fs::write(d.join("summary.json"), serde_json::to_vec_pretty(&report.summary)?)?;
    }
    Ok(report)
}
