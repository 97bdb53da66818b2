use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gain::GainForm;
use crate::kernel::PartnerMode;

/// Annealing schedule for the correction factor `beta_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// `1 - exp(-(i - 1))`
    #[default]
    PseudoCode,
    /// `beta_max * exp(i + 1 - kappa)`, clamped at `beta_max`
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Keep the candidate iff its cost is not larger than the old one.
    #[default]
    GreedyMin,
    /// Keep the candidate iff its cost is not smaller than the old one.
    LiteralPaper,
    AlwaysAccept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Random-walk prediction before every update; 2N evaluations per iteration.
    WithPrediction,
    /// Update the previous ensemble directly; N evaluations per iteration.
    #[default]
    NoPrediction,
}

/// Which best cost enters the cost innovations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremalMode {
    /// Best over all particles and all past iterations.
    #[default]
    Running,
    /// Best of the ensemble being updated.
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stagnation {
    /// Iterations without sufficient improvement before stopping.
    pub window: usize,
    /// Improvement below `tolerance * max(1, |best|)` counts as none.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    #[serde(skip)]
    pub ensemble_size: usize,
    #[serde(skip)]
    pub max_iterations: usize,
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,

    pub alpha: f64,
    pub beta_schedule: BetaSchedule,
    pub beta_max: f64,
    /// Total iteration count used by the exponential schedule; defaults to
    /// `max_iterations`.
    pub beta_kappa: Option<usize>,
    /// Cost-innovation intensity. Default: 1e-2 times the standard deviation
    /// of the initial costs.
    pub rho: Option<f64>,
    /// Coalescence intensities per coordinate. Default: 1e-2 times the
    /// width of the initialization box.
    pub rho_c: Option<Vec<f64>>,
    /// Prediction intensity `g` as rows of an `n x n` matrix. Default:
    /// diagonal, 1e-2 times the box width.
    pub prediction_intensity: Option<Vec<Vec<f64>>>,
    pub selection: SelectionMode,
    pub variant: Variant,
    pub gain_form: GainForm,
    pub partner_mode: PartnerMode,
    pub extremal_mode: ExtremalMode,
    pub coalescence: bool,
    pub clip_to_box: bool,
    pub stagnation: Option<Stagnation>,
    pub tau_0: f64,
    pub delta_tau: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 30,
            max_iterations: 500,
            seed: 0,
            execution: Execution::default(),
            alpha: 0.8,
            beta_schedule: BetaSchedule::default(),
            beta_max: 2.0,
            beta_kappa: None,
            rho: None,
            rho_c: None,
            prediction_intensity: None,
            selection: SelectionMode::default(),
            variant: Variant::default(),
            gain_form: GainForm::default(),
            partner_mode: PartnerMode::default(),
            extremal_mode: ExtremalMode::default(),
            coalescence: true,
            clip_to_box: false,
            stagnation: None,
            tau_0: 1.0,
            delta_tau: 1e-7,
        }
    }
}

impl AlgoConfig {
    pub fn with_run(mut self, ensemble_size: usize, max_iterations: usize, seed: u64) -> Self {
        self.ensemble_size = ensemble_size;
        self.max_iterations = max_iterations;
        self.seed = seed;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.ensemble_size < 2 {
            return bad(format!(
                "ensemble_size must be at least 2, got {}",
                self.ensemble_size
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.beta_max.is_finite() && self.beta_max > 0.0) {
            return bad(format!("beta_max must be positive, got {}", self.beta_max));
        }
        if self.beta_kappa == Some(0) {
            return bad("beta_kappa must be positive".into());
        }
        if let Some(rho) = self.rho {
            if !(rho.is_finite() && rho > 0.0) {
                return bad(format!("rho must be finite and positive, got {rho}"));
            }
        }
        if let Some(rc) = &self.rho_c {
            if rc.len() != dim {
                return bad(format!("rho_c has {} entries, problem has {dim}", rc.len()));
            }
            if rc.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("rho_c entries must be finite and positive: {rc:?}"));
            }
        }
        if let Some(g) = &self.prediction_intensity {
            if g.len() != dim || g.iter().any(|r| r.len() != dim) {
                return bad(format!("prediction_intensity must be {dim}x{dim}"));
            }
            if g.iter().flatten().any(|v| !v.is_finite()) {
                return bad("prediction_intensity has non-finite entries".into());
            }
        }
        if !(self.tau_0.is_finite() && self.delta_tau.is_finite() && self.delta_tau > 0.0) {
            return bad(format!(
                "need finite tau_0 and delta_tau > 0, got ({}, {})",
                self.tau_0, self.delta_tau
            ));
        }
        if let Some(s) = self.stagnation {
            if s.window == 0 || !(s.tolerance >= 0.0) {
                return bad(format!("invalid stagnation settings {s:?}"));
            }
        }
        Ok(())
    }

    /// Annealing factor for iteration `i >= 1`.
    pub fn beta(&self, i: usize) -> f64 {
        let kappa = self.beta_kappa.unwrap_or(self.max_iterations.max(1));
        beta_factor(i, self.beta_schedule, self.beta_max, kappa)
    }
}

/// Annealing factor for iteration `i >= 1`. Both schedules are
/// non-decreasing in `i`.
pub fn beta_factor(i: usize, schedule: BetaSchedule, beta_max: f64, kappa: usize) -> f64 {
    match schedule {
        BetaSchedule::PseudoCode => 1.0 - (-(i as f64 - 1.0)).exp(),
        BetaSchedule::Exponential => {
            (beta_max * (i as f64 + 1.0 - kappa as f64).exp()).min(beta_max)
        }
    }
}
