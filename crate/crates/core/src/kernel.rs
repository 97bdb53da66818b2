//! Seedable randomness: Gaussian increments, partner and scrambling
//! permutations, and uniform sampling over a box.
//!
//! Every random draw of a run comes from a ChaCha8 stream keyed by the run
//! seed. Distinct (iteration, purpose) pairs select distinct ChaCha stream
//! ids, so sub-streams never overlap and a run is reproducible bit for bit
//! regardless of how work is scheduled across threads.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// What a sub-stream is used for. The discriminant is folded into the
/// ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Initialization = 0,
    Prediction = 1,
    Partners = 2,
    Scramble = 3,
    Swarm = 4,
    MeasurementNoise = 5,
    General = 15,
}

const PURPOSE_BITS: u32 = 4;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, Purpose::General, 0)
    }

    fn stream(seed: u64, purpose: Purpose, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((index << PURPOSE_BITS) | purpose as u64);
        Self { seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for `(purpose, index)` under the same seed.
    pub fn substream(&self, purpose: Purpose, index: u64) -> Self {
        Self::stream(self.seed, purpose, index)
    }

    /// Position in the underlying 32-bit word stream.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub(crate) fn shuffle<T>(&mut self, values: &mut [T]) {
        values.shuffle(&mut self.rng);
    }
}

/// Draws `cols` columns of `g z` with `z ~ N(0, I)`, i.e. zero-mean
/// increments with covariance `g gᵀ`. The output has `g.nrows()` rows.
pub fn gaussian_increments(
    rows: usize,
    cols: usize,
    intensity: &DMatrix<f64>,
    rng: &mut RngState,
) -> Result<DMatrix<f64>> {
    if !intensity.is_square() || intensity.nrows() != rows {
        return Err(Error::InvalidParameter(format!(
            "intensity must be {rows}x{rows}, got {}x{}",
            intensity.nrows(),
            intensity.ncols()
        )));
    }
    if intensity.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "intensity matrix has non-finite entries".into(),
        ));
    }
    let z = DMatrix::from_fn(rows, cols, |_, _| rng.standard_normal());
    Ok(intensity * z)
}

/// How coalescence partners are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerMode {
    /// Each particle draws its partner independently from the other `N - 1`.
    #[default]
    Independent,
    /// A uniformly random fixed-point-free permutation.
    Derangement,
}

/// Coalescence partners (0-based): `partners[j] != j` for every `j`.
pub fn partner_indices(n: usize, mode: PartnerMode, rng: &mut RngState) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::DegenerateEnsemble(n));
    }
    match mode {
        PartnerMode::Independent => Ok((0..n)
            .map(|j| {
                // uniform over {0..n} \ {j}
                let k = rng.index(n - 1);
                if k >= j {
                    k + 1
                } else {
                    k
                }
            })
            .collect()),
        PartnerMode::Derangement => {
            let mut perm: Vec<usize> = (0..n).collect();
            loop {
                rng.shuffle(&mut perm);
                if perm.iter().enumerate().all(|(j, &p)| p != j) {
                    return Ok(perm);
                }
            }
        }
    }
}

/// Uniformly random bijection of `0..n` (fixed points allowed).
pub fn full_permutation(n: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::DegenerateEnsemble(0));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    Ok(perm)
}

/// `count` columns sampled coordinatewise uniform in `[lower, upper]`.
pub fn uniform_box(
    lower: &[f64],
    upper: &[f64],
    count: usize,
    rng: &mut RngState,
) -> Result<DMatrix<f64>> {
    check_bounds(lower, upper)?;
    let n = lower.len();
    let mut out = DMatrix::zeros(n, count);
    for j in 0..count {
        for k in 0..n {
            let u = rng.uniform();
            out[(k, j)] = lower[k] + u * (upper[k] - lower[k]);
        }
    }
    Ok(out)
}

pub(crate) fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.len() != upper.len() {
        return Err(Error::ShapeMismatch(format!(
            "lower has {} coordinates, upper has {}",
            lower.len(),
            upper.len()
        )));
    }
    for (coord, (&l, &u)) in lower.iter().zip(upper).enumerate() {
        if !l.is_finite() || !u.is_finite() || l > u {
            return Err(Error::InvalidBounds {
                coord,
                lower: l,
                upper: u,
            });
        }
    }
    Ok(())
}

/// Checks that `perm` is a bijection of `0..n`.
pub fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}
