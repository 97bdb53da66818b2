use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RunSummary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Side {
    pub algorithm: String,
    pub median_final_cost: Option<f64>,
    pub success_rate: f64,
    pub median_iterations_to_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub problem: String,
    pub ensemble_size: usize,
    pub iterations: usize,
    pub a: Side,
    pub b: Side,
    /// `a - b`; negative means `a` did better.
    pub median_cost_delta: Option<f64>,
    pub success_rate_delta: f64,
    pub iterations_to_threshold_delta: Option<f64>,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// Per shared seed where both runs finished.
    pub per_seed: Vec<SeedComparison>,
}

impl Comparison {
    /// Share of compared seeds won by `a`.
    pub fn win_rate_a(&self) -> f64 {
        let n = self.per_seed.len();
        if n == 0 {
            0.0
        } else {
            self.wins_a as f64 / n as f64
        }
    }
}

fn side(s: &RunSummary) -> Side {
    Side {
        algorithm: s.algorithm.clone(),
        median_final_cost: s.aggregate.median_final_cost,
        success_rate: s.aggregate.success_rate,
        median_iterations_to_threshold: s.aggregate.median_iterations_to_threshold,
    }
}

/// Side-by-side report of two summaries on the same problem and budget
/// (ensemble size and iteration count).
pub fn compare(a: &RunSummary, b: &RunSummary) -> Result<Comparison> {
    if a.problem != b.problem || a.dim != b.dim {
        return Err(Error::InvalidComparison(format!(
            "different problems: {} ({}-d) vs {} ({}-d)",
            a.problem, a.dim, b.problem, b.dim
        )));
    }
    if a.ensemble_size != b.ensemble_size || a.iterations != b.iterations {
        return Err(Error::InvalidComparison(format!(
            "different budgets: N = {} x {} iterations vs N = {} x {} iterations",
            a.ensemble_size, a.iterations, b.ensemble_size, b.iterations
        )));
    }
    let b_costs: BTreeMap<u64, f64> = b
        .seeds
        .iter()
        .filter_map(|r| r.final_cost.map(|c| (r.seed, c)))
        .collect();
    let per_seed: Vec<SeedComparison> = a
        .seeds
        .iter()
        .filter_map(|r| {
            let (ca, cb) = (r.final_cost?, *b_costs.get(&r.seed)?);
            let winner = if ca < cb {
                Winner::A
            } else if cb < ca {
                Winner::B
            } else {
                Winner::Tie
            };
            Some(SeedComparison {
                seed: r.seed,
                cost_a: ca,
                cost_b: cb,
                winner,
            })
        })
        .collect();
    let count = |w: Winner| per_seed.iter().filter(|s| s.winner == w).count();
    let (sa, sb) = (side(a), side(b));
    let delta = |x: Option<f64>, y: Option<f64>| Some(x? - y?);
    // deltas use each summary's own aggregate; restricting to shared seeds
    // would hide one-sided failures
    Ok(Comparison {
        problem: a.problem.clone(),
        ensemble_size: a.ensemble_size,
        iterations: a.iterations,
        median_cost_delta: delta(sa.median_final_cost, sb.median_final_cost),
        success_rate_delta: sa.success_rate - sb.success_rate,
        iterations_to_threshold_delta: delta(
            sa.median_iterations_to_threshold,
            sb.median_iterations_to_threshold,
        ),
        wins_a: count(Winner::A),
        wins_b: count(Winner::B),
        ties: count(Winner::Tie),
        a: sa,
        b: sb,
        per_seed,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} (N = {}, {} iterations)",
            self.problem, self.ensemble_size, self.iterations
        )?;
        writeln!(f, "{:<28} {:>14} {:>14} {:>14}", "", self.a.algorithm, self.b.algorithm, "delta")?;
        writeln!(
            f,
            "{:<28} {:>14} {:>14} {:>14}",
            "median final cost",
            opt(self.a.median_final_cost),
            opt(self.b.median_final_cost),
            opt(self.median_cost_delta)
        )?;
        writeln!(
            f,
            "{:<28} {:>14.3} {:>14.3} {:>14.3}",
            "success rate", self.a.success_rate, self.b.success_rate, self.success_rate_delta
        )?;
        writeln!(
            f,
            "{:<28} {:>14} {:>14} {:>14}",
            "median iters to threshold",
            opt(self.a.median_iterations_to_threshold),
            opt(self.b.median_iterations_to_threshold),
            opt(self.iterations_to_threshold_delta)
        )?;
        write!(
            f,
            "per-seed: {} wins {}, {} wins {}, ties {}",
            self.a.algorithm, self.wins_a, self.b.algorithm, self.wins_b, self.ties
        )
    }
}
