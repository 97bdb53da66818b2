//! Derivative-free global optimization with an ensemble of candidates that
//! is corrected by a gain matrix built from cost and coalescence
//! innovations, scrambled across particles, annealed, and filtered by
//! per-particle selection.
//!
//! ```no_run
//! use mreo::{AlgoConfig, problems::testbed};
//!
//! let problem = testbed::rastrigin(2);
//! let config = AlgoConfig::default().with_run(30, 300, 7);
//! let (best, trace) = mreo::run(&problem, config).unwrap();
//! println!("{} after {} iterations", best.best_cost, trace.iterations());
//! ```
//!
//! The crate also carries a global-best particle swarm baseline ([`pso`]),
//! ODE parameter-recovery problems ([`problems`]), and the multi-seed
//! experiment harness used by the `mreo` binary ([`harness`]).

pub mod config;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod gain;
pub mod harness;
pub mod kernel;
pub mod optimizer;
pub mod problems;
pub mod pso;
pub mod trace;

pub use config::{AlgoConfig, BetaSchedule, ExtremalMode, SelectionMode, Stagnation, Variant};
pub use ensemble::{CostVector, Ensemble, ExtremalRecord, IterationClock};
pub use error::{Error, Result};
pub use exec::Execution;
pub use gain::GainForm;
pub use optimizer::{run, Optimizer, OptimizerState};
pub use problems::CostProblem;
pub use trace::{Trace, TraceRecord};
