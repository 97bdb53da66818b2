//! Textbook multimodal functions used for desk-scale calibration.

use std::f64::consts::{E, PI};

use super::CostProblem;

type Objective = dyn Fn(&[f64]) -> f64 + Send + Sync;

pub struct Testbed {
    name: String,
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    optimum: Option<Vec<f64>>,
    f: Box<Objective>,
}

impl std::fmt::Debug for Testbed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Testbed")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish()
    }
}

impl Testbed {
    /// Replaces the initialization box.
    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.dim);
        assert_eq!(upper.len(), self.dim);
        self.lower = lower;
        self.upper = upper;
        self
    }

    fn with_optimum(mut self, x: Vec<f64>) -> Self {
        self.optimum = Some(x);
        self
    }
}

impl CostProblem for Testbed {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn optimum(&self) -> Option<&[f64]> {
        self.optimum.as_deref()
    }
}

/// Wraps an arbitrary closure as a cost problem.
pub fn from_fn<F>(name: &str, dim: usize, lower: Vec<f64>, upper: Vec<f64>, f: F) -> Testbed
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Testbed {
        name: name.to_string(),
        dim,
        lower,
        upper,
        optimum: None,
        f: Box::new(f),
    }
}

/// `sum x_k^2` on `[-5, 5]^n`; minimum 0 at the origin.
pub fn sphere(n: usize) -> Testbed {
    from_fn("sphere", n, vec![-5.0; n], vec![5.0; n], |x| {
        x.iter().map(|v| v * v).sum()
    })
    .with_optimum(vec![0.0; n])
}

/// `10 n + sum (x_k^2 - 10 cos 2 pi x_k)` on `[-5.12, 5.12]^n`; minimum 0 at the origin.
pub fn rastrigin(n: usize) -> Testbed {
    from_fn("rastrigin", n, vec![-5.12; n], vec![5.12; n], |x| {
        10.0 * x.len() as f64
            + x.iter()
                .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
                .sum::<f64>()
    })
    .with_optimum(vec![0.0; n])
}

/// Rosenbrock valley on `[-2.048, 2.048]^n`; minimum 0 at `(1, ..., 1)`.
/// For `n = 1` only the `(1 - x)^2` term remains.
pub fn rosenbrock(n: usize) -> Testbed {
    from_fn("rosenbrock", n, vec![-2.048; n], vec![2.048; n], |x| {
        if x.len() == 1 {
            return (1.0 - x[0]).powi(2);
        }
        x.windows(2)
            .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
            .sum()
    })
    .with_optimum(vec![1.0; n])
}

/// Ackley function on `[-32.768, 32.768]^n`; minimum 0 at the origin.
pub fn ackley(n: usize) -> Testbed {
    from_fn("ackley", n, vec![-32.768; n], vec![32.768; n], |x| {
        let d = x.len() as f64;
        let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
        let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
        -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
    })
    .with_optimum(vec![0.0; n])
}

/// Looks up a testbed function by name.
pub fn by_name(name: &str, n: usize) -> Option<Testbed> {
    match name {
        "sphere" => Some(sphere(n)),
        "rastrigin" => Some(rastrigin(n)),
        "rosenbrock" => Some(rosenbrock(n)),
        "ackley" => Some(ackley(n)),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["sphere", "rastrigin", "rosenbrock", "ackley"];
