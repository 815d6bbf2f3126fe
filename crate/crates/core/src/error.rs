use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("gradient target must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("`{0}` has no vector-Jacobian rule (third derivatives are not supported)")]
    Unsupported(&'static str),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration key `{key}`; valid keys are: {valid}")]
    UnknownKey { key: String, valid: String },

    #[error("element Z={0} is not covered by the model")]
    UnknownElement(u8),

    #[error("extended-XYZ frame {frame}: {message}")]
    Parse { frame: usize, message: String },

    #[error("reference energy fit is rank deficient; confounded elements: {0:?}")]
    RankDeficient(Vec<u8>),

    #[error("split over-allocated: requested {requested} of {available} items")]
    OverAllocated { requested: usize, available: usize },

    #[error("missing labels: {0}")]
    MissingLabels(&'static str),

    #[error("geometry minimization did not converge after {iterations} iterations (max |F| = {max_force:.3e} eV/Å)")]
    NoConvergence { iterations: usize, max_force: f64 },

    #[error("non-finite loss at epoch {epoch}, step {step}; batch {batch:?}, gradient norm {grad_norm}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch: Vec<usize>,
        grad_norm: f64,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
