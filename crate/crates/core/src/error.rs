use thiserror::Error;

use crate::model::ClassicalState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("model assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("numerical consistency: {quantity} has imaginary residue {residue:e}")]
    NumericalConsistency { quantity: String, residue: f64 },

    #[error("integration blew up at t = {t}: {reason}")]
    Blowup {
        t: f64,
        reason: String,
        last_finite: Box<ClassicalState>,
    },

    #[error("Fock truncation overflow: leaked weight {leakage:e} exceeds {threshold:e}")]
    TruncationOverflow { leakage: f64, threshold: f64 },

    #[error("Hamiltonian is not Hermitian: max |H - H^*| = {defect:e}")]
    NotHermitian { defect: f64 },

    #[error("evolution failed: {0}")]
    Evolution(String),

    #[error("property check failed: {0}")]
    PropertyFailure(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::AssumptionViolation(_) | Error::Io { .. } => 2,
            Error::PropertyFailure(_) => 1,
            _ => 3,
        }
    }
}
