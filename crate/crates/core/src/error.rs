use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the reduction engine.
///
/// Mode indices carried by variants are 1-based, matching the labelling
/// `λ_1 < λ_2 < ...` used in reports and artifacts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid of {grid} points per angle aliases cutoff {cutoff} (need at least {required})")]
    Aliasing {
        grid: usize,
        cutoff: usize,
        required: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("small divisor {value:.3e} below floor {floor:.3e} at {}", fmt_triple(*.i, *.j, .k))]
    DivisorTooSmall {
        i: Option<usize>,
        j: Option<usize>,
        k: Vec<i64>,
        value: f64,
        floor: f64,
    },

    #[error("hermiticity violated: {0}")]
    NotHermitian(String),

    #[error("eigenvalue {value} of mode {index} is not positive")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("frequency excluded at step {step}: |λ_{i} - λ_{j} + ω·k| = {value:.3e} < {bound:.3e} for k = {k:?}")]
    FrequencyExcluded {
        step: usize,
        i: usize,
        j: usize,
        k: Vec<i64>,
        value: f64,
        bound: f64,
    },

    #[error("no admissible frequency among {samples} samples (gamma = {gamma})")]
    NoAdmissibleFrequency { samples: usize, gamma: f64 },

    #[error("matrix exponential failed: {0}")]
    Exponential(String),

    #[error("guard violated: {0}")]
    GuardViolated(String),

    #[error("step size {dt} does not resolve the spectrum (dt * max|λ| = {product:.3} >= 0.1)")]
    StepSize { dt: f64, product: f64 },

    #[error("mode {first_bad} not converged: relative change {change:.3e} exceeds {tol:.1e}")]
    NotConverged { first_bad: usize, change: f64, tol: f64 },

    #[error("quadrature not converged for (i={i}, j={j}, term={term}): change {change:.3e}")]
    Quadrature {
        i: usize,
        j: usize,
        term: usize,
        change: f64,
    },

    #[error("monodromy not unitary: defect {0:.3e}")]
    NonUnitary(f64),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_triple(i: Option<usize>, j: Option<usize>, k: &[i64]) -> String {
    match (i, j) {
        (Some(i), Some(j)) => format!("(i={i}, j={j}, k={k:?})"),
        _ => format!("k={k:?}"),
    }
}
