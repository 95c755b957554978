use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate constraint normal")]
    DegenerateNormal,

    #[error("empty polyhedron")]
    EmptyPolyhedron,

    /// The active-set loop ran out of iterations; `best` is the last iterate.
    #[error("projection iteration cap exceeded (kkt residual {kkt_residual:e})")]
    IterationLimit { best: Vec<f64>, kkt_residual: f64 },

    #[error("oracle instance too large")]
    OracleTooLarge,

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite constraint value at index {index}")]
    NonFiniteConstraint { index: usize },

    #[error("sample outside domain")]
    SampleOutsideDomain,

    #[error("unknown theorem identifier `{0}`")]
    UnknownTheorem(String),

    #[error("benchmark infeasible")]
    BenchmarkInfeasible,

    #[error("benchmark budget exhausted (kkt residual {kkt_residual:e})")]
    BenchmarkBudget { best: Vec<f64>, kkt_residual: f64 },

    #[error("no benchmark recorded at round {0}")]
    MissingBenchmark(usize),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                source: Box::new(e),
            },
        }
    }

    /// Innermost error, looking through round annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Round { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures caused by the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::DegenerateNormal
                | Error::EmptyPolyhedron
                | Error::IterationLimit { .. }
                | Error::NonFiniteConstraint { .. }
                | Error::BenchmarkInfeasible
                | Error::BenchmarkBudget { .. }
        )
    }
}
