//! Innovations, the blended innovation covariance, the gain matrix, and the
//! additive corrections it produces.
//!
//! Shapes, with `n` the search dimension, `N` the ensemble size and
//! `m = 1 + n` (or `m = 1` without coalescence):
//!
//! | quantity        | shape   |
//! |-----------------|---------|
//! | ensemble `X`    | `n x N` |
//! | innovations `F` | `m x N` |
//! | covariance      | `m x m` |
//! | gain `G`        | `n x m` |
//! | corrections `D` | `n x N` |
//!
//! Column `j` of `F` stacks the cost innovation `f_hat - f_j` on top of the
//! coalescence innovation `x_{partner(j)} - x_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{CostVector, Ensemble};
use crate::error::{Error, Result};
use crate::kernel::is_bijection;

#[derive(Debug, Clone, PartialEq)]
pub struct InnovationMatrix(DMatrix<f64>);

impl InnovationMatrix {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self(values)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn size(&self) -> usize {
        self.0.ncols()
    }

    pub fn has_coalescence(&self) -> bool {
        self.0.nrows() > 1
    }
}

/// Stacks `(f_hat - f_j ; x_{partners[j]} - x_j)` column by column.
/// With `partners = None` only the cost row is built.
pub fn build_innovations(
    ensemble: &Ensemble,
    costs: &CostVector,
    f_hat: f64,
    partners: Option<&[usize]>,
) -> Result<InnovationMatrix> {
    let size = ensemble.size();
    if size < 2 {
        return Err(Error::DegenerateEnsemble(size));
    }
    if costs.len() != size {
        return Err(Error::ShapeMismatch(format!(
            "{} costs for {size} particles",
            costs.len()
        )));
    }
    let x = ensemble.matrix();
    let n = ensemble.dim();
    let rows = if partners.is_some() { 1 + n } else { 1 };
    let mut out = DMatrix::zeros(rows, size);
    for j in 0..size {
        out[(0, j)] = f_hat - costs[j];
    }
    if let Some(p) = partners {
        if p.len() != size {
            return Err(Error::ShapeMismatch(format!(
                "{} partners for {size} particles",
                p.len()
            )));
        }
        for (j, &pj) in p.iter().enumerate() {
            if pj == j || pj >= size {
                return Err(Error::InvalidPermutation(format!(
                    "partner {pj} is not admissible for particle {j}"
                )));
            }
            for k in 0..n {
                out[(1 + k, j)] = x[(k, pj)] - x[(k, j)];
            }
        }
    }
    Ok(InnovationMatrix(out))
}

/// Prescribed innovation noise `diag(rho^2, rho_c,1^2, ..., rho_c,n^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock(DMatrix<f64>);

impl NoiseBlock {
    /// `rho_c = None` gives the cost-only `1 x 1` block.
    pub fn new(rho: f64, rho_c: Option<&[f64]>) -> Result<Self> {
        let mut diag = vec![rho];
        if let Some(c) = rho_c {
            diag.extend_from_slice(c);
        }
        if let Some(bad) = diag.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "noise intensities must be finite and positive, got {bad}"
            )));
        }
        let sq: Vec<f64> = diag.iter().map(|v| v * v).collect();
        Ok(Self(DMatrix::from_diagonal(&DVector::from_vec(sq))))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `floor(1 / ||gamma gamma^T||_F)`, the perturbation index of the
    /// local search and coalescence step. Diagnostic only.
    pub fn perturbation_index(&self) -> f64 {
        (1.0 / self.0.norm()).floor()
    }
}

/// `alpha * S + (1 - alpha) * gamma gamma^T`, with `S` the two-pass sample
/// covariance (`1/(N-1)`) of the innovation columns.
pub fn blended_covariance(
    innovations: &InnovationMatrix,
    alpha: f64,
    noise: &NoiseBlock,
) -> Result<DMatrix<f64>> {
    let f = innovations.matrix();
    let size = f.ncols();
    if size < 2 {
        return Err(Error::DegenerateEnsemble(size));
    }
    if noise.dim() != f.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "noise block is {0}x{0}, innovations have {1} rows",
            noise.dim(),
            f.nrows()
        )));
    }
    let s = sample_covariance(f);
    let blended = s * alpha + noise.matrix() * (1.0 - alpha);
    Ok((&blended + blended.transpose()) * 0.5)
}

pub(crate) fn sample_covariance(f: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = f.column_mean();
    let mut centered = f.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    &centered * centered.transpose() / (f.ncols() as f64 - 1.0)
}

/// Inverse of a symmetric matrix with a diagonal jitter when it is close to
/// singular.
///
/// The matrix is first equilibrated, `M = D S D` with `D = diag(sqrt(m_kk))`,
/// so rows of very different scale (a cost row in the millions next to
/// coordinate rows of order one) do not set each other's jitter. Then
/// `S^{-1}` is replaced by `(S + eps I)^{-1}` with
/// `eps = max(0, eps0 - lambda_min(S))`, `eps0 = 1e-10 * (1 + trace(S) / dim)`,
/// and the result is `D^{-1} (S + eps I)^{-1} D^{-1}`. Well-conditioned input
/// is inverted exactly; non-positive diagonal entries are left unscaled.
pub fn regularized_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let d = sym
        .diagonal()
        .map(|v| if v.is_finite() && v > 0.0 { v.sqrt() } else { 1.0 });
    let scaled = DMatrix::from_fn(dim, dim, |r, c| sym[(r, c)] / (d[r] * d[c]));
    let unscale = |inv: DMatrix<f64>| DMatrix::from_fn(dim, dim, |r, c| inv[(r, c)] / (d[r] * d[c]));

    let eig = scaled.clone().symmetric_eigen();
    let lambda_min = eig.eigenvalues.min();
    let eps0 = 1e-10 * (1.0 + scaled.trace() / dim as f64);
    let eps = (eps0 - lambda_min).max(0.0);
    let shifted = &scaled + DMatrix::identity(dim, dim) * eps;
    if let Some(inv) = shifted.try_inverse() {
        if inv.iter().all(|v| v.is_finite()) {
            return unscale(inv);
        }
    }
    // spectral fallback, eigenvalues floored at eps0
    let floored = eig.eigenvalues.map(|l| 1.0 / (l + eps).max(eps0));
    unscale(&eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose())
}

/// Which transcription of the gain's cross-covariance factor to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainForm {
    /// Everything from the current ensemble. `F` holds the observed
    /// quantities `(f_j ; x_j - x_partner(j))` whose mismatch against
    /// `(f_hat ; 0)` is the innovation, the previous-time quantities are the
    /// current ensemble means and the functional increment is the extremal
    /// drift `f_hat * dtau`. The factor reduces to `tau_i (X - X̄)(F - F̄)^T`,
    /// a Kalman-type cross-covariance: corrections move particles downhill
    /// and towards their partners.
    #[default]
    Ensemble,
    /// Previous-iteration snapshots with increment `F_i - F_{i-1}`. The
    /// factor reduces to `(X - X̄) F_{i-1}^T dtau`, so corrections scale
    /// with the pseudo-time step.
    Lagged,
}

/// Inputs of the gain formula
///
/// `G = (1/N) [ (X - X̄)(F^T tau - F_p^T tau_p - dF^T tau)
///            + (X̄ tau - X̄_p tau_p)(F - F̄)^T ] C^{-1}`
///
/// where bars broadcast column means and the `_p` quantities belong to the
/// previous pseudo-time. `dF` is `increment + increment_lo`; the low-order
/// part lets a difference like `F - F_p` be carried exactly.
#[derive(Debug, Clone)]
pub struct GainTerms {
    pub ensemble: DMatrix<f64>,
    pub prev_ensemble: DMatrix<f64>,
    pub functional: DMatrix<f64>,
    pub prev_functional: DMatrix<f64>,
    pub increment: DMatrix<f64>,
    pub increment_lo: DMatrix<f64>,
    pub tau: f64,
    pub tau_prev: f64,
}

impl GainTerms {
    /// Previous-iteration snapshots, `dF = F - F_prev`.
    pub fn lagged(
        ensemble: &Ensemble,
        innovations: &InnovationMatrix,
        prev_ensemble: &Ensemble,
        prev_innovations: &InnovationMatrix,
        tau: f64,
        tau_prev: f64,
    ) -> Self {
        let f = innovations.matrix().clone();
        let fp = prev_innovations.matrix().clone();
        let mut lo = DMatrix::zeros(f.nrows(), f.ncols());
        let hi = DMatrix::from_fn(f.nrows(), f.ncols(), |r, c| {
            let (h, l) = two_sum(f[(r, c)], -fp.get((r, c)).copied().unwrap_or(0.0));
            lo[(r, c)] = l;
            h
        });
        Self {
            ensemble: ensemble.matrix().clone(),
            prev_ensemble: prev_ensemble.matrix().clone(),
            increment: hi,
            increment_lo: lo,
            functional: f,
            prev_functional: fp,
            tau,
            tau_prev,
        }
    }

    /// Current ensemble only: `F = -I` (observed values, up to a constant
    /// shift that the centering removes), `X_p = X`, `F_p = F̄`, and `dF`
    /// carries the extremal drift `f_hat * (tau - tau_prev)` in the cost row.
    pub fn ensemble(
        ensemble: &Ensemble,
        innovations: &InnovationMatrix,
        f_hat: f64,
        tau: f64,
        tau_prev: f64,
    ) -> Self {
        let f = -innovations.matrix().clone();
        let mean = f.column_mean();
        let size = f.ncols();
        let fbar = DMatrix::from_fn(f.nrows(), size, |r, _| mean[r]);
        let mut increment = DMatrix::zeros(f.nrows(), size);
        increment.row_mut(0).fill(f_hat * (tau - tau_prev));
        Self {
            ensemble: ensemble.matrix().clone(),
            prev_ensemble: ensemble.matrix().clone(),
            functional: f,
            prev_functional: fbar,
            increment_lo: DMatrix::zeros(increment.nrows(), size),
            increment,
            tau,
            tau_prev,
        }
    }

    fn check(&self, inv_cov: &DMatrix<f64>) -> Result<()> {
        let (n, size) = self.ensemble.shape();
        let m = self.functional.nrows();
        let ok = self.prev_ensemble.shape() == (n, size)
            && self.functional.ncols() == size
            && self.prev_functional.shape() == (m, size)
            && self.increment.shape() == (m, size)
            && self.increment_lo.shape() == (m, size)
            && inv_cov.shape() == (m, m)
            && (m == 1 || m == 1 + n);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "gain terms: X {:?}, X_prev {:?}, F {:?}, F_prev {:?}, dF {:?}, C^-1 {:?}",
                self.ensemble.shape(),
                self.prev_ensemble.shape(),
                self.functional.shape(),
                self.prev_functional.shape(),
                self.increment.shape(),
                inv_cov.shape()
            )))
        }
    }
}

/// `n x m` gain matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix(DMatrix<f64>);

impl GainMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl From<DMatrix<f64>> for GainMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}

fn broadcast_mean(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.column_mean();
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, _| mean[r])
}

pub fn gain(terms: &GainTerms, inv_cov: &DMatrix<f64>) -> Result<GainMatrix> {
    terms.check(inv_cov)?;
    let size = terms.ensemble.ncols();
    let m = terms.functional.nrows();
    let (tau, tau_p) = (terms.tau, terms.tau_prev);

    // The time-weighted factor cancels down to O(dtau) in the lagged form,
    // so each entry is summed from error-free products.
    let time_weighted = DMatrix::from_fn(size, m, |j, r| {
        let mut acc = Compensated::default();
        acc.add_product(terms.functional[(r, j)], tau);
        acc.add_product(-terms.prev_functional[(r, j)], tau_p);
        acc.add_product(-terms.increment[(r, j)], tau);
        acc.add_product(-terms.increment_lo[(r, j)], tau);
        acc.value()
    });
    let centered = &terms.ensemble - broadcast_mean(&terms.ensemble);
    // The second summand, (X̄ tau - X̄_p tau_p)(F - F̄)^T, has identical
    // columns on the left and zero row sums on the right, so it vanishes
    // exactly; evaluating it would only add rounding noise of order
    // |X| |F| eps to a factor that may itself be O(dtau).
    let g = centered * time_weighted / size as f64 * inv_cov;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("gain has non-finite entries".into()));
    }
    Ok(GainMatrix(g))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Double-double accumulator for a handful of products.
#[derive(Default)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let (s, e) = two_sum(self.hi, v);
        self.hi = s;
        self.lo += e;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.add(p);
        self.lo += a.mul_add(b, -p);
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Column `j` is `beta * G * F_j`.
pub fn corrections(
    gain: &GainMatrix,
    beta: f64,
    innovations: &InnovationMatrix,
) -> Result<DMatrix<f64>> {
    if gain.0.ncols() != innovations.rows() {
        return Err(Error::ShapeMismatch(format!(
            "gain has {} columns, innovations have {} rows",
            gain.0.ncols(),
            innovations.rows()
        )));
    }
    Ok(&gain.0 * innovations.matrix() * beta)
}

/// Output column `j` is input column `sigma2[j]`.
pub fn scramble(corrections: &DMatrix<f64>, sigma2: &[usize]) -> Result<DMatrix<f64>> {
    if sigma2.len() != corrections.ncols() || !is_bijection(sigma2) {
        return Err(Error::InvalidPermutation(format!(
            "{sigma2:?} is not a bijection of 0..{}",
            corrections.ncols()
        )));
    }
    Ok(corrections.select_columns(sigma2))
}
