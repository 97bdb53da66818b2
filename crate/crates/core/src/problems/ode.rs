use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::CostProblem;
use crate::error::{Error, Result};
use crate::kernel::{check_bounds, Purpose, RngState};

/// Right-hand side `out = psi(t, x, theta)`.
pub type FieldFn = fn(t: f64, x: &[f64], theta: &[f64], out: &mut [f64]);

#[derive(Debug, Clone, Copy)]
pub struct OdeModel {
    pub label: &'static str,
    pub state_dim: usize,
    pub param_dim: usize,
    pub field: FieldFn,
}

impl OdeModel {
    pub fn lorenz() -> Self {
        Self {
            label: "lorenz",
            state_dim: 3,
            param_dim: 3,
            field: |_, x, th, out| out.copy_from_slice(&lorenz_field(x, th)),
        }
    }

    pub fn chen() -> Self {
        Self {
            label: "chen",
            state_dim: 3,
            param_dim: 3,
            field: |_, x, th, out| out.copy_from_slice(&chen_field(x, th)),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        (self.field)(t, x, theta, &mut out);
        out
    }
}

pub fn lorenz_field(x: &[f64], theta: &[f64]) -> [f64; 3] {
    let (px, py, pz) = (x[0], x[1], x[2]);
    [
        theta[0] * (py - px),
        theta[1] * px - py - px * pz,
        px * py - theta[2] * pz,
    ]
}

pub fn chen_field(x: &[f64], theta: &[f64]) -> [f64; 3] {
    let (px, py, pz) = (x[0], x[1], x[2]);
    [
        theta[0] * (py - px),
        (theta[2] - theta[0]) * px + theta[2] * py - px * pz,
        px * py - theta[1] * pz,
    ]
}

/// Scratch buffers for one classical Runge-Kutta step.
struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    fn new(d: usize) -> Self {
        Self {
            k1: vec![0.0; d],
            k2: vec![0.0; d],
            k3: vec![0.0; d],
            k4: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    /// Writes the step result into `out`; false if any stage went non-finite.
    fn step(
        &mut self,
        model: &OdeModel,
        theta: &[f64],
        x: &[f64],
        t: f64,
        dt: f64,
        out: &mut [f64],
    ) -> bool {
        let f = model.field;
        let h2 = 0.5 * dt;
        f(t, x, theta, &mut self.k1);
        for k in 0..x.len() {
            self.tmp[k] = x[k] + h2 * self.k1[k];
        }
        f(t + h2, &self.tmp, theta, &mut self.k2);
        for k in 0..x.len() {
            self.tmp[k] = x[k] + h2 * self.k2[k];
        }
        f(t + h2, &self.tmp, theta, &mut self.k3);
        for k in 0..x.len() {
            self.tmp[k] = x[k] + dt * self.k3[k];
        }
        f(t + dt, &self.tmp, theta, &mut self.k4);
        let stages_finite = [&self.k1, &self.k2, &self.k3, &self.k4]
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()));
        for k in 0..x.len() {
            out[k] = x[k]
                + dt / 6.0 * (self.k1[k] + 2.0 * self.k2[k] + 2.0 * self.k3[k] + self.k4[k]);
        }
        stages_finite && out.iter().all(|v| v.is_finite())
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(model: &OdeModel, theta: &[f64], x: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let mut ws = Rk4Workspace::new(x.len());
    let mut out = vec![0.0; x.len()];
    if ws.step(model, theta, x, t, dt, &mut out) {
        Ok(out)
    } else {
        Err(Error::IntegrationBlowup {
            t,
            state: x.to_vec(),
        })
    }
}

fn step_count(t0: f64, t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_end > t0) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and t_end > t0, got dt = {dt}, span = ({t0}, {t_end}]"
        )));
    }
    let span = t_end - t0;
    let m = (span / dt).round();
    if (m * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "time span {span} is not a multiple of dt = {dt}"
        )));
    }
    Ok(m as usize)
}

/// Sampled solution on a uniform grid, including the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub times: Vec<f64>,
    /// `(M + 1) x state_dim`, one row per time.
    pub states: DMatrix<f64>,
    pub true_params: Option<Vec<f64>>,
}

impl ReferenceTrajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn x0(&self) -> Vec<f64> {
        self.states.row(0).iter().copied().collect()
    }

    /// Writes `t,x1,..,xd` rows, preceded by a `# true_params=` comment when known.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if let Some(p) = &self.true_params {
            let joined: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            writeln!(file, "# true_params={}", joined.join(","))?;
        }
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.states.ncols()).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:?}")];
            row.extend(self.states.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut true_params = None;
        for line in text.as_bytes().lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# true_params=") {
                let parsed: std::result::Result<Vec<f64>, _> =
                    rest.split(',').map(|s| s.trim().parse::<f64>()).collect();
                true_params = Some(parsed.map_err(|e| {
                    Error::Config(format!("bad true_params comment in {}: {e}", path.display()))
                })?);
            }
        }
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let width = r.headers()?.len();
        if width < 2 {
            return Err(Error::Config(format!(
                "{}: expected columns t,x1,..; got {width}",
                path.display()
            )));
        }
        let mut times = Vec::new();
        let mut flat = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if vals.len() != width {
                return Err(Error::Config(format!("{}: ragged row", path.display())));
            }
            times.push(vals[0]);
            flat.extend_from_slice(&vals[1..]);
        }
        if times.len() < 2 {
            return Err(Error::Config(format!(
                "{}: need at least two time samples",
                path.display()
            )));
        }
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "{}: time grid must be strictly increasing with constant spacing",
                    path.display()
                )));
            }
        }
        let states = DMatrix::from_row_slice(times.len(), width - 1, &flat);
        Ok(Self {
            times,
            states,
            true_params,
        })
    }
}

/// Integrates from `x0` at `t0` to `t_end` in uniform RK4 steps.
pub fn integrate(
    model: &OdeModel,
    theta: &[f64],
    x0: &[f64],
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if x0.len() != model.state_dim || theta.len() != model.param_dim {
        return Err(Error::ShapeMismatch(format!(
            "{} expects state {} / params {}, got {} / {}",
            model.label,
            model.state_dim,
            model.param_dim,
            x0.len(),
            theta.len()
        )));
    }
    let m = step_count(t0, t_end, dt)?;
    let d = model.state_dim;
    let mut ws = Rk4Workspace::new(d);
    let mut states = DMatrix::zeros(m + 1, d);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    states.row_mut(0).copy_from_slice(&x);
    for i in 0..m {
        let t = t0 + i as f64 * dt;
        if !ws.step(model, theta, &x, t, dt, &mut next) {
            return Err(Error::IntegrationBlowup { t, state: x });
        }
        std::mem::swap(&mut x, &mut next);
        for k in 0..d {
            states[(i + 1, k)] = x[k];
        }
    }
    Ok(ReferenceTrajectory {
        times: (0..=m).map(|i| t0 + i as f64 * dt).collect(),
        states,
        true_params: Some(theta.to_vec()),
    })
}

/// Simulated states beyond this magnitude count as a blowup.
pub const BLOWUP_MAGNITUDE: f64 = 1e9;
const BLOWUP_BASE: f64 = 1e18;
const BLOWUP_PROGRESS_CREDIT: f64 = 1e16;

/// Sum of squared state misfits between the reference and a simulation
/// with `theta`, started from the same initial state on the same grid.
///
/// A simulation that blows up after completing a fraction `p` of the steps
/// costs `1e18 - p * 1e16`, so earlier blowups cost more.
pub fn trajectory_cost(model: &OdeModel, reference: &ReferenceTrajectory, theta: &[f64]) -> f64 {
    let d = model.state_dim;
    let m = reference.steps();
    let dt = reference.dt();
    let t0 = reference.t0();
    let mut ws = Rk4Workspace::new(d);
    let mut x = reference.x0();
    let mut next = vec![0.0; d];
    let mut cost = 0.0;
    for i in 0..m {
        let t = t0 + i as f64 * dt;
        let ok = ws.step(model, theta, &x, t, dt, &mut next)
            && next.iter().all(|v| v.abs() <= BLOWUP_MAGNITUDE);
        if !ok {
            return BLOWUP_BASE - BLOWUP_PROGRESS_CREDIT * (i as f64 / m as f64);
        }
        std::mem::swap(&mut x, &mut next);
        for k in 0..d {
            let r = reference.states[(i + 1, k)] - x[k];
            cost += r * r;
        }
    }
    cost
}

/// Recover ODE parameters by matching a reference trajectory.
#[derive(Debug, Clone)]
pub struct OdeRecoveryProblem {
    name: String,
    pub model: OdeModel,
    pub reference: ReferenceTrajectory,
    lower: Vec<f64>,
    upper: Vec<f64>,
    true_params: Option<Vec<f64>>,
}

pub const LORENZ_TRUE: [f64; 3] = [10.0, 28.0, 8.0 / 3.0];
pub const CHEN_TRUE: [f64; 3] = [35.0, 3.0, 28.0];
pub const OSCILLATOR_LOWER: [f64; 3] = [-10.0, -10.0, 0.0];
pub const OSCILLATOR_UPPER: [f64; 3] = [51.0, 60.0, 40.0];
pub const OSCILLATOR_X0: [f64; 3] = [1.0, 1.0, 1.0];
pub const OSCILLATOR_DT: f64 = 0.01;
pub const OSCILLATOR_T_END: f64 = 0.3;

impl OdeRecoveryProblem {
    /// Simulates the reference with `true_params` and uses it as data.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: OdeModel,
        true_params: &[f64],
        x0: &[f64],
        t0: f64,
        t_end: f64,
        dt: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let reference = integrate(&model, true_params, x0, t0, t_end, dt)?;
        Self::from_reference(model, reference, lower, upper)
    }

    pub fn from_reference(
        model: OdeModel,
        reference: ReferenceTrajectory,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        check_bounds(&lower, &upper)?;
        if lower.len() != model.param_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} has {} parameters, bounds have {}",
                model.label,
                model.param_dim,
                lower.len()
            )));
        }
        if reference.states.ncols() != model.state_dim || reference.times.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "reference trajectory does not fit the {} model",
                model.label
            )));
        }
        Ok(Self {
            name: model.label.to_string(),
            model,
            true_params: reference.true_params.clone(),
            reference,
            lower,
            upper,
        })
    }

    /// Lorenz recovery: theta = (10, 28, 8/3), x0 = (1, 1, 1), dt = 0.01 over (0, 0.3].
    pub fn lorenz() -> Result<Self> {
        Self::new(
            OdeModel::lorenz(),
            &LORENZ_TRUE,
            &OSCILLATOR_X0,
            0.0,
            OSCILLATOR_T_END,
            OSCILLATOR_DT,
            OSCILLATOR_LOWER.to_vec(),
            OSCILLATOR_UPPER.to_vec(),
        )
    }

    /// Chen recovery: theta = (35, 3, 28) on the same grid and box.
    pub fn chen() -> Result<Self> {
        Self::new(
            OdeModel::chen(),
            &CHEN_TRUE,
            &OSCILLATOR_X0,
            0.0,
            OSCILLATOR_T_END,
            OSCILLATOR_DT,
            OSCILLATOR_LOWER.to_vec(),
            OSCILLATOR_UPPER.to_vec(),
        )
    }

    /// Adds i.i.d. Gaussian noise of standard deviation `sigma` to every
    /// sampled state after the initial one.
    pub fn with_measurement_noise(mut self, sigma: f64, seed: u64) -> Self {
        if sigma > 0.0 {
            let mut rng = RngState::new(seed).substream(Purpose::MeasurementNoise, 0);
            let (rows, cols) = self.reference.states.shape();
            for i in 1..rows {
                for k in 0..cols {
                    self.reference.states[(i, k)] += sigma * rng.standard_normal();
                }
            }
        }
        self
    }

    pub fn true_params(&self) -> Option<&[f64]> {
        self.true_params.as_deref()
    }
}

impl CostProblem for OdeRecoveryProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.model.param_dim
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn eval(&self, x: &[f64]) -> f64 {
        trajectory_cost(&self.model, &self.reference, x)
    }

    fn optimum(&self) -> Option<&[f64]> {
        self.true_params.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_field() -> OdeModel {
        OdeModel {
            label: "zero",
            state_dim: 2,
            param_dim: 0,
            field: |_, _, _, out| out.fill(0.0),
        }
    }

    fn growth() -> OdeModel {
        OdeModel {
            label: "growth",
            state_dim: 1,
            param_dim: 0,
            field: |_, x, _, out| out[0] = x[0],
        }
    }

    #[test]
    fn zero_field_leaves_state() {
        let x = rk4_step(&zero_field(), &[], &[1.5, -2.0], 0.0, 0.1).unwrap();
        assert_eq!(x, vec![1.5, -2.0]);
        let traj = integrate(&zero_field(), &[], &[3.0, 4.0], 0.0, 1.0, 0.25).unwrap();
        assert_eq!(traj.steps(), 4);
        for i in 0..=4 {
            assert_eq!(traj.states.row(i).iter().copied().collect::<Vec<_>>(), vec![3.0, 4.0]);
        }
    }

    #[test]
    fn exponential_step_is_fourth_order_taylor() {
        let x = rk4_step(&growth(), &[], &[1.0], 0.0, 0.1).unwrap();
        let h: f64 = 0.1;
        let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x[0] - taylor).abs() < 1e-15);
        assert!((x[0] - 1.105_170_833_333_333).abs() < 1e-14);
    }

    #[test]
    fn paper_grid_has_thirty_steps() {
        let traj = integrate(&OdeModel::lorenz(), &LORENZ_TRUE, &OSCILLATOR_X0, 0.0, 0.3, 0.01)
            .unwrap();
        assert_eq!(traj.steps(), 30);
        assert_eq!(traj.times.len(), 31);
        assert!((traj.dt() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn uneven_span_rejected() {
        assert!(integrate(&growth(), &[], &[1.0], 0.0, 0.305, 0.01).is_err());
        assert!(rk4_step(&growth(), &[], &[1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn blowup_is_reported() {
        let m = OdeModel {
            label: "nan",
            state_dim: 1,
            param_dim: 0,
            field: |_, x, _, out| out[0] = if x[0] > 1.0 { f64::NAN } else { 1.0 },
        };
        assert!(matches!(
            rk4_step(&m, &[], &[2.0], 0.0, 0.1),
            Err(Error::IntegrationBlowup { .. })
        ));
    }

    #[test]
    fn field_values() {
        assert_eq!(lorenz_field(&[0.0; 3], &LORENZ_TRUE), [0.0; 3]);
        let v = lorenz_field(&[1.0, 1.0, 1.0], &LORENZ_TRUE);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 26.0);
        assert!((v[2] - (-5.0 / 3.0)).abs() < 1e-15);
        assert_eq!(lorenz_field(&[2.0, 3.0, 5.0], &[0.0; 3]), [0.0, -3.0 - 10.0, 6.0]);

        assert_eq!(chen_field(&[0.0; 3], &CHEN_TRUE), [0.0; 3]);
        assert_eq!(chen_field(&[1.0, 1.0, 1.0], &CHEN_TRUE), [0.0, 20.0, -2.0]);
        // theta_1 = theta_3 removes the x coupling in the second component
        let a = chen_field(&[7.0, 2.0, 0.5], &[4.0, 1.0, 4.0]);
        assert_eq!(a[1], 4.0 * 2.0 - 7.0 * 0.5);
    }

    #[test]
    fn cost_vanishes_at_truth_and_is_positive_elsewhere() {
        for p in [OdeRecoveryProblem::lorenz().unwrap(), OdeRecoveryProblem::chen().unwrap()] {
            let truth = p.true_params().unwrap().to_vec();
            assert_eq!(p.eval(&truth), 0.0);
            let mut off = truth.clone();
            off[0] += 0.5;
            assert!(p.eval(&off) > 0.0);
        }
    }

    #[test]
    fn blowup_is_penalized_not_thrown() {
        let p = OdeRecoveryProblem::lorenz().unwrap();
        let c = p.eval(&[-1e6, 1e6, -1e6]);
        assert!(c.is_finite());
        assert!(c > 9e17);
    }

    #[test]
    fn noise_hook_changes_data_but_not_x0() {
        let clean = OdeRecoveryProblem::lorenz().unwrap();
        let noisy = clean.clone().with_measurement_noise(0.1, 3);
        assert_eq!(clean.reference.x0(), noisy.reference.x0());
        assert_ne!(clean.reference.states, noisy.reference.states);
        assert!(noisy.eval(&LORENZ_TRUE) > 0.0);
        let same = clean.clone().with_measurement_noise(0.0, 3);
        assert_eq!(same.reference.states, clean.reference.states);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lorenz.csv");
        let p = OdeRecoveryProblem::lorenz().unwrap();
        p.reference.write_csv(&path).unwrap();
        let back = ReferenceTrajectory::read_csv(&path).unwrap();
        assert_eq!(back, p.reference);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("t,x1,x2,x3"));
    }
}
