//! Independent annealing runs, each on a fixed-k chain whose k is drawn at
//! random, keeping the shortest model found by any of them.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::chain::{AnnealSchedule, ChainState, Visit};
use crate::error::{Error, Result};
use crate::exec::{Budget, Execution};
use crate::model::Dataset;
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSearchConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub schedule: AnnealSchedule,
    pub seed: u64,
    pub budget: Budget,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealRun {
    pub k: usize,
    pub best_total: f64,
    pub sweeps: usize,
    pub completed: bool,
}

#[derive(Debug, Clone)]
pub struct AnnealSearchResult {
    pub best: Visit,
    pub runs: Vec<AnnealRun>,
}

/// Run `index` of a search: its own random stream picks k, the starting
/// labels, and every draw the chain makes.
pub fn anneal_once(
    data: &Dataset,
    cfg: &AnnealSearchConfig,
    index: usize,
    deadline: Option<Instant>,
) -> Result<(Visit, AnnealRun)> {
    let mut rng = substream(cfg.seed, Purpose::Anneal, index as u64);
    let k = rng.random_range(cfg.k_min..=cfg.k_max);
    let mut chain = ChainState::random(data, k, cfg.k_max, rng)?;
    let out = chain.run_anneal_until(data, &cfg.schedule, deadline)?;
    let run = AnnealRun { k, best_total: out.best.length.total, sweeps: out.sweeps, completed: out.completed };
    Ok((out.best, run))
}

/// Annealing restarts until the budget is spent. Under a run budget the
/// result depends only on the seed; under a time budget runs still in flight
/// stop at the deadline and their best-so-far counts.
pub fn anneal_search(data: &Dataset, cfg: &AnnealSearchConfig) -> Result<AnnealSearchResult> {
    if cfg.k_min == 0 || cfg.k_min > cfg.k_max {
        return Err(Error::input(format!("need 1 <= k_min <= k_max, got {}..={}", cfg.k_min, cfg.k_max)));
    }
    if data.n_obs() < cfg.k_max {
        return Err(Error::input("fewer observations than classes"));
    }
    cfg.schedule.validate()?;
    let start = Instant::now();
    let deadline = cfg.budget.deadline(start);
    let width = cfg.execution.threads();
    let mut best: Option<Visit> = None;
    let mut runs = Vec::new();
    while cfg.budget.allows(runs.len(), start) {
        let first = runs.len();
        let batch = match cfg.budget {
            Budget::Runs(n) => width.min(n.max(1) - first),
            Budget::Time(_) => width,
        };
        let results = cfg.execution.map_range(batch, |i| anneal_once(data, cfg, first + i, deadline));
        for r in results {
            let (visit, run) = r?;
            if best.as_ref().is_none_or(|b| visit.length.total < b.length.total) {
                best = Some(visit);
            }
            runs.push(run);
        }
    }
    let best = best.expect("budget always admits one run");
    Ok(AnnealSearchResult { best, runs })
}
