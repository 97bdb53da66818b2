//! The ensemble search loop.
//!
//! Each iteration optionally predicts (random walk), builds cost and
//! coalescence innovations against the extremal cost, forms the gain from
//! the blended innovation covariance, applies the annealed corrections after
//! scrambling them across particles, and keeps or reverts each particle by
//! the selection rule.

use nalgebra::DMatrix;

use crate::config::{AlgoConfig, ExtremalMode, SelectionMode, Variant};
use crate::ensemble::{ensemble_spread, evaluate_ensemble, CostVector, Ensemble, ExtremalRecord, IterationClock};
use crate::error::{Error, Result};
use crate::gain::{
    blended_covariance, build_innovations, corrections, gain, regularized_inverse, scramble,
    GainForm, GainMatrix, GainTerms, InnovationMatrix, NoiseBlock,
};
use crate::kernel::{
    full_permutation, gaussian_increments, partner_indices, uniform_box, Purpose, RngState,
};
use crate::problems::CostProblem;
use crate::trace::{Trace, TraceRecord};

const DEFAULT_INTENSITY_FRACTION: f64 = 1e-2;

/// Ensemble and innovations that fed the previous update.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub ensemble: Ensemble,
    pub innovations: InnovationMatrix,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub ensemble: Ensemble,
    pub costs: CostVector,
    pub prev: Option<Snapshot>,
    pub extremal: ExtremalRecord,
    pub clock: IterationClock,
    pub rng: RngState,
    pub eval_count: usize,
    pub noise: NoiseBlock,
    pub prediction_intensity: DMatrix<f64>,
}

impl OptimizerState {
    pub fn iteration(&self) -> usize {
        self.clock.i
    }
}

/// Random draws consumed by one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraws {
    /// Prediction increments (`n x N`), only for the prediction variant.
    pub prediction: Option<DMatrix<f64>>,
    /// Coalescence partners, absent when coalescence is off.
    pub partners: Option<Vec<usize>>,
    /// Scrambling permutation.
    pub sigma2: Vec<usize>,
}

/// Intermediate quantities of one iteration, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub innovations: InnovationMatrix,
    pub covariance: DMatrix<f64>,
    pub gain: GainMatrix,
    pub beta: f64,
    pub corrections: DMatrix<f64>,
    pub candidate: Ensemble,
    pub candidate_costs: CostVector,
    pub record: TraceRecord,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: ExtremalRecord,
    pub trace: Trace,
    pub eval_count: usize,
    pub final_state: OptimizerState,
}

pub struct Optimizer<'a> {
    problem: &'a dyn CostProblem,
    config: AlgoConfig,
}

/// `x + g z`, leaving `x` untouched.
pub fn predict(ensemble: &Ensemble, intensity: &DMatrix<f64>, rng: &mut RngState) -> Result<Ensemble> {
    let inc = gaussian_increments(ensemble.dim(), ensemble.size(), intensity, rng)?;
    Ensemble::new(ensemble.matrix() + inc)
}

/// Per-particle accept/revert. Equal costs keep the candidate.
pub fn select(
    old: &Ensemble,
    old_costs: &CostVector,
    candidate: &Ensemble,
    cand_costs: &CostVector,
    mode: SelectionMode,
) -> Result<(Ensemble, CostVector)> {
    if old.matrix().shape() != candidate.matrix().shape()
        || old_costs.len() != old.size()
        || cand_costs.len() != candidate.size()
    {
        return Err(Error::ShapeMismatch("selection inputs differ in shape".into()));
    }
    let mut x = old.matrix().clone();
    let mut f = old_costs.values().to_vec();
    for j in 0..old.size() {
        let keep = match mode {
            SelectionMode::GreedyMin => cand_costs[j] <= old_costs[j],
            SelectionMode::LiteralPaper => cand_costs[j] >= old_costs[j],
            SelectionMode::AlwaysAccept => true,
        };
        if keep {
            x.set_column(j, &candidate.matrix().column(j));
            f[j] = cand_costs[j];
        }
    }
    Ok((Ensemble::from_matrix_unchecked(x), CostVector::new(f)?))
}

impl<'a> Optimizer<'a> {
    pub fn new(problem: &'a dyn CostProblem, config: AlgoConfig) -> Result<Self> {
        config.validate(problem.dim())?;
        crate::kernel::check_bounds(problem.lower(), problem.upper())?;
        if problem.lower().len() != problem.dim() {
            return Err(Error::Config(format!(
                "problem {} has dimension {} but {} bounds",
                problem.name(),
                problem.dim(),
                problem.lower().len()
            )));
        }
        Ok(Self { problem, config })
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.config
    }

    fn box_widths(&self) -> Vec<f64> {
        self.problem
            .lower()
            .iter()
            .zip(self.problem.upper())
            .map(|(l, u)| {
                let w = DEFAULT_INTENSITY_FRACTION * (u - l);
                if w > 0.0 {
                    w
                } else {
                    DEFAULT_INTENSITY_FRACTION
                }
            })
            .collect()
    }

    /// Samples the initial ensemble in the problem box and evaluates it.
    pub fn initialize(&self) -> Result<(OptimizerState, Trace)> {
        let root = RngState::new(self.config.seed);
        let mut init_rng = root.substream(Purpose::Initialization, 0);
        let x = uniform_box(
            self.problem.lower(),
            self.problem.upper(),
            self.config.ensemble_size,
            &mut init_rng,
        )?;
        self.initialize_with(Ensemble::new(x)?)
    }

    /// Starts from a given ensemble instead of sampling one.
    pub fn initialize_with(&self, ensemble: Ensemble) -> Result<(OptimizerState, Trace)> {
        let cfg = &self.config;
        let n = self.problem.dim();
        if ensemble.dim() != n || ensemble.size() != cfg.ensemble_size {
            return Err(Error::ShapeMismatch(format!(
                "initial ensemble is {}x{}, expected {n}x{}",
                ensemble.dim(),
                ensemble.size(),
                cfg.ensemble_size
            )));
        }
        let costs = evaluate_ensemble(self.problem, &ensemble, cfg.execution)
            .map_err(|e| e.at_iteration(0))?;
        let rho = cfg.rho.unwrap_or_else(|| {
            let s = DEFAULT_INTENSITY_FRACTION * costs.std_dev();
            if s.is_finite() && s > 0.0 {
                s
            } else {
                DEFAULT_INTENSITY_FRACTION
            }
        });
        let rho_c = cfg.rho_c.clone().unwrap_or_else(|| self.box_widths());
        let noise = NoiseBlock::new(rho, cfg.coalescence.then_some(rho_c.as_slice()))?;
        let prediction_intensity = match &cfg.prediction_intensity {
            Some(rows) => DMatrix::from_fn(n, n, |r, c| rows[r][c]),
            None => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.box_widths())),
        };

        let mut extremal = ExtremalRecord::empty(n);
        extremal.update(&ensemble, &costs, 0);
        let clock = IterationClock::new(cfg.tau_0, cfg.delta_tau)?;
        let state = OptimizerState {
            eval_count: ensemble.size(),
            rng: RngState::new(cfg.seed),
            ensemble,
            costs,
            prev: None,
            extremal,
            clock,
            noise,
            prediction_intensity,
        };
        let mut trace = Trace::default();
        trace.push(TraceRecord {
            iteration: 0,
            tau: state.clock.tau(),
            best_cost: state.extremal.best_cost,
            mean_cost: state.costs.mean(),
            spread: ensemble_spread(&state.ensemble),
            beta: 0.0,
            gain_norm: 0.0,
            l_index: state.noise.perturbation_index(),
            best_point: state.extremal.best_point.clone(),
        });
        Ok((state, trace))
    }

    /// Draws the randomness for the next iteration from its own sub-streams.
    pub fn draw(&self, state: &OptimizerState) -> Result<StepDraws> {
        let i = (state.clock.i + 1) as u64;
        let size = state.ensemble.size();
        let prediction = match self.config.variant {
            Variant::WithPrediction => {
                let mut rng = state.rng.substream(Purpose::Prediction, i);
                Some(gaussian_increments(
                    state.ensemble.dim(),
                    size,
                    &state.prediction_intensity,
                    &mut rng,
                )?)
            }
            Variant::NoPrediction => None,
        };
        let partners = if self.config.coalescence {
            let mut rng = state.rng.substream(Purpose::Partners, i);
            Some(partner_indices(size, self.config.partner_mode, &mut rng)?)
        } else {
            None
        };
        let mut rng = state.rng.substream(Purpose::Scramble, i);
        let sigma2 = full_permutation(size, &mut rng)?;
        Ok(StepDraws {
            prediction,
            partners,
            sigma2,
        })
    }

    pub fn step(&self, state: &mut OptimizerState) -> Result<StepReport> {
        let draws = self.draw(state)?;
        self.step_with(state, &draws)
    }

    /// One iteration using caller-supplied draws.
    pub fn step_with(&self, state: &mut OptimizerState, draws: &StepDraws) -> Result<StepReport> {
        let cfg = &self.config;
        let i = state.clock.i + 1;
        let with_iter = |e: Error| e.at_iteration(i);

        // base ensemble the update acts on
        let (base, base_costs) = match (&cfg.variant, &draws.prediction) {
            (Variant::WithPrediction, Some(inc)) => {
                let predicted = Ensemble::new(state.ensemble.matrix() + inc)?;
                let costs = evaluate_ensemble(self.problem, &predicted, cfg.execution)
                    .map_err(with_iter)?;
                state.eval_count += predicted.size();
                state.extremal.update(&predicted, &costs, i);
                (predicted, costs)
            }
            (Variant::WithPrediction, None) => {
                return Err(Error::InvalidParameter(
                    "prediction variant needs prediction increments".into(),
                ))
            }
            (Variant::NoPrediction, _) => (state.ensemble.clone(), state.costs.clone()),
        };

        let f_hat = match cfg.extremal_mode {
            ExtremalMode::Running => state.extremal.best_cost,
            ExtremalMode::PerIteration => base_costs.argmin().1,
        };
        let innovations =
            build_innovations(&base, &base_costs, f_hat, draws.partners.as_deref())?;
        let covariance = blended_covariance(&innovations, cfg.alpha, &state.noise)?;
        let inv = regularized_inverse(&covariance);
        let tau = state.clock.tau_at(i);
        let tau_prev = state.clock.tau_at(i - 1);
        let terms = match cfg.gain_form {
            GainForm::Ensemble => GainTerms::ensemble(&base, &innovations, f_hat, tau, tau_prev),
            GainForm::Lagged => {
                let (pe, pf) = match &state.prev {
                    Some(s) => (&s.ensemble, &s.innovations),
                    None => (&base, &innovations),
                };
                GainTerms::lagged(&base, &innovations, pe, pf, tau, tau_prev)
            }
        };
        let g = gain(&terms, &inv)?;
        let beta = cfg.beta(i);
        let d = corrections(&g, beta, &innovations)?;
        let d = scramble(&d, &draws.sigma2)?;

        let mut cand = base.matrix() + &d;
        if cfg.clip_to_box {
            let (lo, hi) = (self.problem.lower(), self.problem.upper());
            for mut col in cand.column_iter_mut() {
                for k in 0..col.len() {
                    col[k] = col[k].clamp(lo[k], hi[k]);
                }
            }
        }
        let candidate = Ensemble::new(cand).map_err(|_| {
            Error::InvalidParameter(format!("update produced non-finite particles at iteration {i}"))
        })?;
        let cand_costs =
            evaluate_ensemble(self.problem, &candidate, cfg.execution).map_err(with_iter)?;
        state.eval_count += candidate.size();

        let (next, next_costs) =
            select(&state.ensemble, &state.costs, &candidate, &cand_costs, cfg.selection)?;
        state.extremal.update(&next, &next_costs, i);
        state.prev = Some(Snapshot {
            ensemble: base,
            innovations: innovations.clone(),
        });
        state.ensemble = next;
        state.costs = next_costs;
        state.clock.advance();

        let record = TraceRecord {
            iteration: i,
            tau: state.clock.tau(),
            best_cost: state.extremal.best_cost,
            mean_cost: state.costs.mean(),
            spread: ensemble_spread(&state.ensemble),
            beta,
            gain_norm: g.norm(),
            l_index: state.noise.perturbation_index(),
            best_point: state.extremal.best_point.clone(),
        };
        Ok(StepReport {
            innovations,
            covariance,
            gain: g,
            beta,
            corrections: d,
            candidate,
            candidate_costs: cand_costs,
            record,
        })
    }

    pub fn run(&self) -> Result<RunOutcome> {
        let (mut state, mut trace) = self.initialize()?;
        self.run_from(&mut state, &mut trace)?;
        Ok(RunOutcome {
            record: state.extremal.clone(),
            eval_count: state.eval_count,
            trace,
            final_state: state,
        })
    }

    /// Iterates until the budget is spent or the stagnation rule fires.
    pub fn run_from(&self, state: &mut OptimizerState, trace: &mut Trace) -> Result<()> {
        while state.clock.i < self.config.max_iterations {
            let report = self.step(state)?;
            trace.push(report.record);
            if self.stagnated(trace) {
                log::debug!("stagnation stop at iteration {}", state.clock.i);
                break;
            }
        }
        Ok(())
    }

    fn stagnated(&self, trace: &Trace) -> bool {
        let Some(s) = self.config.stagnation else {
            return false;
        };
        let n = trace.records.len();
        if n <= s.window {
            return false;
        }
        let then = trace.records[n - 1 - s.window].best_cost;
        let now = trace.records[n - 1].best_cost;
        then - now <= s.tolerance * now.abs().max(1.0)
    }
}

/// Runs the optimizer with `config` on `problem`.
pub fn run(problem: &dyn CostProblem, config: AlgoConfig) -> Result<(ExtremalRecord, Trace)> {
    let out = Optimizer::new(problem, config)?.run()?;
    Ok((out.record, out.trace))
}
