//! State containers shared by the optimizer and the swarm baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::problems::CostProblem;

/// `n x N` matrix of candidates; column `j` is particle `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble(DMatrix<f64>);

impl Ensemble {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "ensemble must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some((idx, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ensemble entry {v} in column {} is not finite",
                idx / values.nrows()
            )));
        }
        Ok(Self(values))
    }

    /// Builds an ensemble from particle vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch("ragged particle list".into()));
        }
        Self::new(DMatrix::from_fn(n, columns.len(), |k, j| columns[j][k]))
    }

    pub(crate) fn from_matrix_unchecked(values: DMatrix<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn size(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.0.column_mean()
    }
}

/// Costs `f(x_j)` of every particle.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector(Vec<f64>);

impl CostVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((column, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::PoisonedCandidate {
                column,
                value,
                iteration: None,
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Index and value of the smallest cost (first one on ties).
    pub fn argmin(&self) -> (usize, f64) {
        self.0
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (j, v)| if v < best.1 { (j, v) } else { best })
    }

    /// Sample standard deviation with the `N - 1` normalisation.
    pub fn std_dev(&self) -> f64 {
        let n = self.0.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let ss: f64 = self.0.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n as f64 - 1.0)).sqrt()
    }
}

impl std::ops::Index<usize> for CostVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Running best cost over all particles and all completed iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalRecord {
    pub best_cost: f64,
    pub best_point: Vec<f64>,
    pub found_at: usize,
}

impl ExtremalRecord {
    pub fn empty(dim: usize) -> Self {
        Self {
            best_cost: f64::INFINITY,
            best_point: vec![f64::NAN; dim],
            found_at: 0,
        }
    }

    /// Folds the ensemble minimum into the record. Ties keep the incumbent.
    pub fn update(&mut self, ensemble: &Ensemble, costs: &CostVector, iteration: usize) -> bool {
        let (j, best) = costs.argmin();
        if best < self.best_cost {
            self.best_cost = best;
            self.best_point = ensemble.column(j);
            self.found_at = iteration;
            true
        } else {
            false
        }
    }
}

/// Pseudo-time `tau_i = tau_0 + i * delta_tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationClock {
    pub tau_0: f64,
    pub delta_tau: f64,
    pub i: usize,
}

impl IterationClock {
    pub fn new(tau_0: f64, delta_tau: f64) -> Result<Self> {
        if !(delta_tau > 0.0 && delta_tau.is_finite() && tau_0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "clock needs finite tau_0 and delta_tau > 0, got ({tau_0}, {delta_tau})"
            )));
        }
        Ok(Self {
            tau_0,
            delta_tau,
            i: 0,
        })
    }

    pub fn tau_at(&self, i: usize) -> f64 {
        self.tau_0 + i as f64 * self.delta_tau
    }

    pub fn tau(&self) -> f64 {
        self.tau_at(self.i)
    }

    pub fn advance(&mut self) {
        self.i += 1;
    }
}

/// Evaluates every column. Non-finite costs are reported with the offending
/// column rather than clamped.
pub fn evaluate_ensemble(
    problem: &dyn CostProblem,
    ensemble: &Ensemble,
    exec: Execution,
) -> Result<CostVector> {
    if problem.dim() != ensemble.dim() {
        return Err(Error::ShapeMismatch(format!(
            "problem dimension {} vs ensemble dimension {}",
            problem.dim(),
            ensemble.dim()
        )));
    }
    let m = ensemble.matrix();
    let values = exec.map_indices(ensemble.size(), |j| {
        let x: Vec<f64> = m.column(j).iter().copied().collect();
        problem.eval(&x)
    });
    CostVector::new(values)
}

/// Root-mean-square distance of the particles from their mean.
pub fn ensemble_spread(ensemble: &Ensemble) -> f64 {
    let m = ensemble.matrix();
    let mean = m.column_mean();
    let ss: f64 = m
        .column_iter()
        .map(|c| (c - &mean).norm_squared())
        .sum();
    (ss / m.ncols() as f64).sqrt()
}
