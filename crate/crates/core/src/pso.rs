//! Global-best particle swarm with inertia weight, used as the comparison
//! baseline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_spread, evaluate_ensemble, Ensemble, ExtremalRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::{uniform_box, Purpose, RngState};
use crate::problems::CostProblem;
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoParams {
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    /// Velocity clamp as a fraction of the box width per coordinate.
    /// Non-positive disables clamping.
    pub velocity_clamp: f64,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            w: 0.729,
            c1: 1.494,
            c2: 1.494,
            velocity_clamp: 0.2,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<()> {
        if [self.w, self.c1, self.c2, self.velocity_clamp]
            .iter()
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config(format!("PSO coefficients must be finite: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Swarm {
    pub positions: DMatrix<f64>,
    pub velocities: DMatrix<f64>,
    pub costs: Vec<f64>,
    pub personal_best: DMatrix<f64>,
    pub personal_best_costs: Vec<f64>,
    pub global_best: Vec<f64>,
    pub global_best_cost: f64,
}

impl Swarm {
    /// Swarm at `positions` with zero velocity; bests taken from the costs.
    pub fn new(positions: DMatrix<f64>, costs: Vec<f64>) -> Self {
        let (j, best) = argmin(&costs);
        Self {
            velocities: DMatrix::zeros(positions.nrows(), positions.ncols()),
            personal_best: positions.clone(),
            personal_best_costs: costs.clone(),
            global_best: positions.column(j).iter().copied().collect(),
            global_best_cost: best,
            positions,
            costs,
        }
    }

    pub fn size(&self) -> usize {
        self.positions.ncols()
    }
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (j, c)| if c < b.1 { (j, c) } else { b })
}

/// Positions uniform in the box, velocities zero.
pub fn init_swarm(
    problem: &dyn CostProblem,
    size: usize,
    rng: &mut RngState,
    exec: Execution,
) -> Result<Swarm> {
    if size == 0 {
        return Err(Error::DegenerateEnsemble(0));
    }
    let x = uniform_box(problem.lower(), problem.upper(), size, rng)?;
    let costs = evaluate_ensemble(problem, &Ensemble::new(x.clone())?, exec)?;
    Ok(Swarm::new(x, costs.values().to_vec()))
}

/// One swarm update with coefficient draws `r1`, `r2` (both `n x N`).
pub fn pso_step_with(
    swarm: &mut Swarm,
    problem: &dyn CostProblem,
    params: &PsoParams,
    r1: &DMatrix<f64>,
    r2: &DMatrix<f64>,
    exec: Execution,
) -> Result<()> {
    let (n, size) = swarm.positions.shape();
    if r1.shape() != (n, size) || r2.shape() != (n, size) {
        return Err(Error::ShapeMismatch("random coefficient matrices".into()));
    }
    let vmax: Vec<f64> = problem
        .lower()
        .iter()
        .zip(problem.upper())
        .map(|(l, u)| params.velocity_clamp * (u - l))
        .collect();
    for j in 0..size {
        for k in 0..n {
            let x = swarm.positions[(k, j)];
            let mut v = params.w * swarm.velocities[(k, j)]
                + params.c1 * r1[(k, j)] * (swarm.personal_best[(k, j)] - x)
                + params.c2 * r2[(k, j)] * (swarm.global_best[k] - x);
            if params.velocity_clamp > 0.0 {
                v = v.clamp(-vmax[k], vmax[k]);
            }
            swarm.velocities[(k, j)] = v;
            swarm.positions[(k, j)] = x + v;
        }
    }
    let positions = Ensemble::new(swarm.positions.clone())?;
    let costs = evaluate_ensemble(problem, &positions, exec)?;
    swarm.costs = costs.values().to_vec();
    for j in 0..size {
        if swarm.costs[j] < swarm.personal_best_costs[j] {
            swarm.personal_best_costs[j] = swarm.costs[j];
            swarm
                .personal_best
                .set_column(j, &swarm.positions.column(j));
        }
    }
    let (j, best) = argmin(&swarm.personal_best_costs);
    if best < swarm.global_best_cost {
        swarm.global_best_cost = best;
        swarm.global_best = swarm.personal_best.column(j).iter().copied().collect();
    }
    Ok(())
}

pub fn pso_step(
    swarm: &mut Swarm,
    problem: &dyn CostProblem,
    params: &PsoParams,
    rng: &mut RngState,
    exec: Execution,
) -> Result<()> {
    let (n, size) = swarm.positions.shape();
    let r1 = DMatrix::from_fn(n, size, |_, _| rng.uniform());
    let r2 = DMatrix::from_fn(n, size, |_, _| rng.uniform());
    pso_step_with(swarm, problem, params, &r1, &r2, exec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoConfig {
    pub ensemble_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub execution: Execution,
    pub params: PsoParams,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 30,
            max_iterations: 500,
            seed: 0,
            execution: Execution::default(),
            params: PsoParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub record: ExtremalRecord,
    pub trace: Trace,
    pub eval_count: usize,
    pub swarm: Swarm,
}

fn record_row(swarm: &Swarm, iteration: usize) -> TraceRecord {
    TraceRecord {
        iteration,
        tau: 0.0,
        best_cost: swarm.global_best_cost,
        mean_cost: swarm.costs.iter().sum::<f64>() / swarm.size() as f64,
        spread: ensemble_spread(&Ensemble::from_matrix_unchecked(swarm.positions.clone())),
        beta: 0.0,
        gain_norm: 0.0,
        l_index: 0.0,
        best_point: swarm.global_best.clone(),
    }
}

/// Runs the swarm; the trace uses the optimizer's schema with the
/// algorithm-specific columns (`tau`, `beta`, `gain_norm`, `l_index`) zero.
pub fn pso_run(problem: &dyn CostProblem, config: &PsoConfig) -> Result<PsoOutcome> {
    config.params.validate()?;
    let root = RngState::new(config.seed);
    let mut init = root.substream(Purpose::Initialization, 0);
    let mut swarm = init_swarm(problem, config.ensemble_size, &mut init, config.execution)
        .map_err(|e| e.at_iteration(0))?;
    let mut eval_count = swarm.size();
    let mut trace = Trace::default();
    trace.push(record_row(&swarm, 0));
    for i in 1..=config.max_iterations {
        let mut rng = root.substream(Purpose::Swarm, i as u64);
        pso_step(&mut swarm, problem, &config.params, &mut rng, config.execution)
            .map_err(|e| e.at_iteration(i))?;
        eval_count += swarm.size();
        trace.push(record_row(&swarm, i));
    }
    let record = ExtremalRecord {
        best_cost: swarm.global_best_cost,
        best_point: swarm.global_best.clone(),
        found_at: trace
            .records
            .iter()
            .find(|r| r.best_cost == swarm.global_best_cost)
            .map_or(0, |r| r.iteration),
    };
    Ok(PsoOutcome {
        record,
        trace,
        eval_count,
        swarm,
    })
}
