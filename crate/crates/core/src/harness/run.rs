use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{AlgorithmSpec, ExperimentConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optimizer::Optimizer;
use crate::problems::{max_relative_error, CostProblem};
use crate::pso::{pso_run, PsoConfig};
use crate::trace::Trace;

/// Per-invocation knobs that are not part of the experiment itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` from the config.
    pub output_dir: Option<PathBuf>,
    /// Seeds run concurrently; 0 means one per available core.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub final_cost: Option<f64>,
    pub recovered_params: Vec<f64>,
    /// Against the problem's known optimum, when it has one.
    pub max_relative_error: Option<f64>,
    pub success: bool,
    /// First iteration whose running best met the success criterion.
    pub iterations_to_threshold: Option<usize>,
    pub iterations: usize,
    pub evaluations: usize,
    pub wall_time_s: f64,
    pub trace_file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub failed_runs: usize,
    pub mean_final_cost: Option<f64>,
    pub median_final_cost: Option<f64>,
    pub std_final_cost: Option<f64>,
    pub successes: usize,
    /// Successes over all seeds; errored seeds count as failures.
    pub success_rate: f64,
    pub median_iterations_to_threshold: Option<f64>,
    pub median_wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub problem: String,
    pub dim: usize,
    pub algorithm: String,
    pub ensemble_size: usize,
    pub iterations: usize,
    pub success_tolerance: f64,
    pub seeds: Vec<SeedRow>,
    pub aggregate: Aggregate,
}

impl RunSummary {
    pub fn any_failed(&self) -> bool {
        self.seeds.iter().any(|r| r.error.is_some())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

impl Aggregate {
    /// Recomputes the aggregate from per-seed rows.
    pub fn from_rows(rows: &[SeedRow]) -> Self {
        let mut costs: Vec<f64> = rows.iter().filter_map(|r| r.final_cost).collect();
        let n = costs.len();
        let mean = (n > 0).then(|| costs.iter().sum::<f64>() / n as f64);
        let std = mean.map(|m| {
            if n < 2 {
                0.0
            } else {
                (costs.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            }
        });
        let successes = rows.iter().filter(|r| r.success).count();
        let mut hits: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.iterations_to_threshold.map(|i| i as f64))
            .collect();
        let mut times: Vec<f64> = rows
            .iter()
            .filter(|r| r.error.is_none())
            .map(|r| r.wall_time_s)
            .collect();
        Aggregate {
            runs: rows.len(),
            failed_runs: rows.iter().filter(|r| r.error.is_some()).count(),
            mean_final_cost: mean,
            median_final_cost: median(&mut costs),
            std_final_cost: std,
            successes,
            success_rate: if rows.is_empty() {
                0.0
            } else {
                successes as f64 / rows.len() as f64
            },
            median_iterations_to_threshold: median(&mut hits),
            median_wall_time_s: median(&mut times),
        }
    }
}

struct Judge<'a> {
    optimum: Option<&'a [f64]>,
    tol: f64,
}

impl Judge<'_> {
    fn error(&self, point: &[f64]) -> Option<f64> {
        self.optimum.map(|o| max_relative_error(point, o))
    }

    fn success(&self, point: &[f64], cost: f64) -> bool {
        match self.error(point) {
            Some(e) => e <= self.tol,
            None => cost <= self.tol,
        }
    }

    fn first_hit(&self, trace: &Trace) -> Option<usize> {
        trace
            .records
            .iter()
            .find(|r| self.success(&r.best_point, r.best_cost))
            .map(|r| r.iteration)
    }
}

fn trace_name(seed: u64) -> String {
    format!("trace_seed_{seed}.csv")
}

fn run_seed(
    cfg: &ExperimentConfig,
    problem: &dyn CostProblem,
    seed: u64,
    execution: Execution,
    out_dir: &Path,
) -> SeedRow {
    let judge = Judge {
        optimum: problem.optimum(),
        tol: cfg.success_tolerance,
    };
    let start = Instant::now();
    let outcome = match &cfg.algorithm {
        AlgorithmSpec::Mreo(algo) => {
            let algo = crate::config::AlgoConfig {
                execution,
                ..algo.clone().with_run(cfg.ensemble_size, cfg.iterations, seed)
            };
            Optimizer::new(problem, algo)
                .and_then(|o| o.run())
                .map(|o| (o.record, o.trace, o.eval_count))
        }
        AlgorithmSpec::Pso(params) => pso_run(
            problem,
            &PsoConfig {
                ensemble_size: cfg.ensemble_size,
                max_iterations: cfg.iterations,
                seed,
                execution,
                params: *params,
            },
        )
        .map(|o| (o.record, o.trace, o.eval_count)),
    };
    let wall = start.elapsed().as_secs_f64();
    let failed = |msg: String| SeedRow {
        seed,
        final_cost: None,
        recovered_params: Vec::new(),
        max_relative_error: None,
        success: false,
        iterations_to_threshold: None,
        iterations: 0,
        evaluations: 0,
        wall_time_s: wall,
        trace_file: None,
        error: Some(msg),
    };
    let (record, trace, evals) = match outcome {
        Ok(v) => v,
        Err(e) => {
            log::warn!("seed {seed}: {e}");
            return failed(e.to_string());
        }
    };
    let name = trace_name(seed);
    if let Err(e) = trace.save(&out_dir.join(&name)) {
        return failed(format!("writing {name}: {e}"));
    }
    let row = SeedRow {
        seed,
        final_cost: Some(record.best_cost),
        max_relative_error: judge.error(&record.best_point),
        success: judge.success(&record.best_point, record.best_cost),
        iterations_to_threshold: judge.first_hit(&trace),
        recovered_params: record.best_point,
        iterations: trace.iterations(),
        evaluations: evals,
        wall_time_s: wall,
        trace_file: Some(name),
        error: None,
    };
    log::info!(
        "seed {seed}: best {:.6e} after {} iterations ({:.2}s){}",
        row.final_cost.unwrap_or(f64::NAN),
        row.iterations,
        wall,
        if row.success { ", success" } else { "" }
    );
    row
}

/// Runs every seed of `cfg`, writes `trace_seed_<seed>.csv` per seed and
/// `summary.json` into the output directory, and returns the summary.
///
/// A seed that errors is recorded in its row and does not stop the others;
/// check [`RunSummary::any_failed`].
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let out_dir = opts
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: set output_dir or pass one".into()))?;
    std::fs::create_dir_all(&out_dir)?;

    let jobs = if opts.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        opts.jobs
    };
    let concurrent = jobs > 1 && cfg.seeds.len() > 1 && Execution::Parallel.is_parallel();
    // one level of parallelism at a time: across seeds, or within a run
    let inner = if concurrent {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let one = |seed: &u64| run_seed(cfg, problem.as_ref(), *seed, inner, &out_dir);
    let rows = if concurrent {
        seed_pool(jobs, &cfg.seeds, one)?
    } else {
        cfg.seeds.iter().map(one).collect()
    };

    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        problem: problem.name().to_string(),
        dim: problem.dim(),
        algorithm: cfg.algorithm.label().to_string(),
        ensemble_size: cfg.ensemble_size,
        iterations: cfg.iterations,
        success_tolerance: cfg.success_tolerance,
        aggregate: Aggregate::from_rows(&rows),
        seeds: rows,
    };
    summary.save(&out_dir.join("summary.json"))?;
    Ok(summary)
}

#[cfg(feature = "parallel")]
fn seed_pool<F>(jobs: usize, seeds: &[u64], f: F) -> Result<Vec<SeedRow>>
where
    F: Fn(&u64) -> SeedRow + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| seeds.par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn seed_pool<F>(_jobs: usize, seeds: &[u64], f: F) -> Result<Vec<SeedRow>>
where
    F: Fn(&u64) -> SeedRow + Sync + Send,
{
    Ok(seeds.iter().map(f).collect())
}
