//! Multi-seed experiments: a JSON experiment description, one trace CSV per
//! seed, a JSON summary, and side-by-side comparison of two summaries.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "problem": { "kind": "lorenz" },
//!   "algorithm": { "name": "mreo", "alpha": 0.8 },
//!   "ensemble_size": 30,
//!   "iterations": 500,
//!   "seeds": [1, 2, 3],
//!   "output_dir": "runs/lorenz"
//! }
//! ```
//!
//! Unknown keys anywhere in the file are rejected.

mod compare;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::AlgoConfig;
use crate::error::{Error, Result};
use crate::problems::{
    testbed, CostProblem, OdeModel, OdeRecoveryProblem, ReferenceTrajectory, CHEN_TRUE,
    LORENZ_TRUE, OSCILLATOR_DT, OSCILLATOR_LOWER, OSCILLATOR_T_END, OSCILLATOR_UPPER,
    OSCILLATOR_X0,
};
use crate::pso::PsoParams;

pub use compare::{compare, Comparison, SeedComparison, Side, Winner};
pub use run::{run_experiment, Aggregate, RunOptions, RunSummary, SeedRow};

pub const SCHEMA_VERSION: u32 = 1;

/// Declared success threshold: max relative parameter error (or best cost,
/// for problems without a known optimum).
pub const DEFAULT_SUCCESS_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_tolerance")]
    pub success_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_ensemble_size() -> usize {
    30
}

fn default_tolerance() -> f64 {
    DEFAULT_SUCCESS_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Lorenz(OdeSpec),
    Chen(OdeSpec),
    Testbed(TestbedSpec),
}

/// Oscillator setup. Every field is optional and falls back to the standard
/// recovery protocol: x0 = (1, 1, 1), dt = 0.01 over (0, 0.3], box
/// (-10, -10, 0)..(51, 60, 40).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_params: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    /// Reference trajectory to fit instead of a simulated one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement_noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedSpec {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    Mreo(AlgoConfig),
    Pso(PsoParams),
}

impl AlgorithmSpec {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmSpec::Mreo(_) => "mreo",
            AlgorithmSpec::Pso(_) => "pso",
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks everything that can be checked without running: schema
    /// version, seeds, budget, the problem definition, and the algorithm
    /// parameters against the problem dimension.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seeds: {dup} appears twice")));
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config(format!(
                "ensemble_size must be at least 2, got {}",
                self.ensemble_size
            )));
        }
        if !(self.success_tolerance.is_finite() && self.success_tolerance > 0.0) {
            return Err(Error::Config(format!(
                "success_tolerance must be positive, got {}",
                self.success_tolerance
            )));
        }
        let problem = self.build_problem()?;
        match &self.algorithm {
            AlgorithmSpec::Mreo(a) => a
                .clone()
                .with_run(self.ensemble_size, self.iterations, 0)
                .validate(problem.dim()),
            AlgorithmSpec::Pso(p) => p.validate().map_err(|e| Error::Config(e.to_string())),
        }
    }

    pub fn build_problem(&self) -> Result<Box<dyn CostProblem>> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(format!("problem: {other}")),
        };
        self.problem.build().map_err(as_config)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn CostProblem>> {
        match self {
            ProblemSpec::Lorenz(spec) => Ok(Box::new(spec.build(OdeModel::lorenz())?)),
            ProblemSpec::Chen(spec) => Ok(Box::new(spec.build(OdeModel::chen())?)),
            ProblemSpec::Testbed(spec) => {
                let base = testbed::by_name(&spec.name, spec.dim).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown testbed function {:?}; known: {}",
                        spec.name,
                        testbed::NAMES.join(", ")
                    ))
                })?;
                if spec.dim == 0 {
                    return Err(Error::Config("testbed dim must be positive".into()));
                }
                let lower = spec.lower.clone().unwrap_or_else(|| base.lower().to_vec());
                let upper = spec.upper.clone().unwrap_or_else(|| base.upper().to_vec());
                if lower.len() != spec.dim || upper.len() != spec.dim {
                    return Err(Error::Config(format!(
                        "testbed bounds must have {} entries",
                        spec.dim
                    )));
                }
                crate::kernel::check_bounds(&lower, &upper)?;
                Ok(Box::new(base.with_bounds(lower, upper)))
            }
        }
    }
}

impl OdeSpec {
    pub fn build(&self, model: OdeModel) -> Result<OdeRecoveryProblem> {
        let default_true = match model.label {
            "chen" => CHEN_TRUE,
            _ => LORENZ_TRUE,
        };
        let lower = self.lower.clone().unwrap_or_else(|| OSCILLATOR_LOWER.to_vec());
        let upper = self.upper.clone().unwrap_or_else(|| OSCILLATOR_UPPER.to_vec());
        let problem = match &self.reference_csv {
            Some(path) => {
                if self.x0.is_some() || self.t0.is_some() || self.t_end.is_some() || self.dt.is_some() {
                    return Err(Error::Config(
                        "reference_csv fixes the time grid and x0; drop x0/t0/t_end/dt".into(),
                    ));
                }
                let mut reference = ReferenceTrajectory::read_csv(path)?;
                if let Some(tp) = &self.true_params {
                    reference.true_params = Some(tp.clone());
                }
                OdeRecoveryProblem::from_reference(model, reference, lower, upper)?
            }
            None => {
                let theta = self.true_params.clone().unwrap_or_else(|| default_true.to_vec());
                let x0 = self.x0.clone().unwrap_or_else(|| OSCILLATOR_X0.to_vec());
                OdeRecoveryProblem::new(
                    model,
                    &theta,
                    &x0,
                    self.t0.unwrap_or(0.0),
                    self.t_end.unwrap_or(OSCILLATOR_T_END),
                    self.dt.unwrap_or(OSCILLATOR_DT),
                    lower,
                    upper,
                )?
            }
        };
        Ok(match self.measurement_noise {
            Some(n) if !(n.sigma.is_finite() && n.sigma >= 0.0) => {
                return Err(Error::Config(format!(
                    "measurement_noise.sigma must be non-negative, got {}",
                    n.sigma
                )))
            }
            Some(n) => problem.with_measurement_noise(n.sigma, n.seed),
            None => problem,
        })
    }
}
