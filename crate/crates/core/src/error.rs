use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate ensemble: {0} particle(s), at least 2 are required")]
    DegenerateEnsemble(usize),

    #[error("invalid bounds in coordinate {coord}: lower {lower} > upper {upper}")]
    InvalidBounds { coord: usize, lower: f64, upper: f64 },

    #[error("non-finite cost {value} for candidate column {column}{}", iteration_suffix(*.iteration))]
    PoisonedCandidate {
        column: usize,
        value: f64,
        iteration: Option<usize>,
    },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("integration blowup at t = {t}: state {state:?}")]
    IntegrationBlowup { t: f64, state: Vec<f64> },

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn iteration_suffix(iteration: Option<usize>) -> String {
    match iteration {
        Some(i) => format!(" at iteration {i}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches an iteration index to a poisoned-candidate error.
    pub(crate) fn at_iteration(self, i: usize) -> Self {
        match self {
            Error::PoisonedCandidate { column, value, .. } => Error::PoisonedCandidate {
                column,
                value,
                iteration: Some(i),
            },
            other => other,
        }
    }
}
