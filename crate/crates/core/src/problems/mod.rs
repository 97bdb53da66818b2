//! Cost problems: the trait every optimizer consumes, a small analytic
//! testbed, and parameter recovery for chaotic oscillators.

mod ode;
pub mod testbed;

pub use ode::{
    chen_field, integrate, lorenz_field, rk4_step, trajectory_cost, FieldFn, OdeModel,
    OdeRecoveryProblem, ReferenceTrajectory, BLOWUP_MAGNITUDE, CHEN_TRUE, LORENZ_TRUE,
    OSCILLATOR_DT, OSCILLATOR_LOWER, OSCILLATOR_T_END, OSCILLATOR_UPPER, OSCILLATOR_X0,
};

/// A deterministic scalar cost over `R^n` with an initialization box.
///
/// `eval` must be pure: the optimizers call it concurrently from worker
/// threads and rely on identical inputs giving identical outputs.
pub trait CostProblem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn lower(&self) -> &[f64];

    fn upper(&self) -> &[f64];

    fn eval(&self, x: &[f64]) -> f64;

    /// Known global minimiser, when there is one.
    fn optimum(&self) -> Option<&[f64]> {
        None
    }
}

/// Largest coordinate-wise relative error of `x` against `target`.
///
/// Coordinates whose target is zero fall back to absolute error.
pub fn max_relative_error(x: &[f64], target: &[f64]) -> f64 {
    x.iter()
        .zip(target)
        .map(|(&v, &t)| {
            let scale = if t == 0.0 { 1.0 } else { t.abs() };
            (v - t).abs() / scale
        })
        .fold(0.0, f64::max)
}
