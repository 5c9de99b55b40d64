use thiserror::Error;

use crate::pair_copula::CopulaFamily;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {0} lies outside the unit interval")]
    Domain(f64),

    #[error("invalid parameters {params:?} for family {family}: {reason}")]
    InvalidParameter {
        family: CopulaFamily,
        params: Vec<f64>,
        reason: String,
    },

    #[error("Kendall's tau {tau} is not attainable by family {family}")]
    TauDomain { family: CopulaFamily, tau: f64 },

    #[error("root finding did not converge: bracket [{lo:e}, {hi:e}] after {iterations} iterations")]
    RootNotFound { lo: f64, hi: f64, iterations: usize },

    #[error("optimisation did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("invalid R-vine matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("edge (row {row}, column {col}): {source}")]
    Edge {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tree {tree}: {source}")]
    Tree {
        tree: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("transition matrix: {0}")]
    Transition(String),

    #[error("inconsistent filter output at t={t}: zero predicted probability for regime {regime}")]
    SmootherInconsistent { t: usize, regime: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_edge(self, row: usize, col: usize) -> Self {
        Error::Edge {
            row,
            col,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_tree(self, tree: usize) -> Self {
        Error::Tree {
            tree,
            source: Box::new(self),
        }
    }

    /// True for failures caused by bad input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Domain(_)
            | Error::Dimension { .. }
            | Error::InvalidMatrix(_)
            | Error::InvalidInput(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::InvalidParameter { .. }
            | Error::TauDomain { .. }
            | Error::Transition(_) => true,
            Error::Edge { source, .. } | Error::Tree { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
