use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate kernel: {0}")]
    InvalidKernel(String),

    #[error("mass {rho} exceeds the critical mass {rho_s}; use the critical activity z_s instead")]
    Supercritical { rho: f64, rho_s: f64 },

    #[error("no equilibrium exists for this kernel: {0}")]
    NoEquilibrium(String),

    #[error("equilibrium coefficient overflows at cluster size {index}")]
    ProfileOverflow { index: usize },

    #[error("reference series Σ Q_i z^i diverges at z = {z}")]
    DivergentReference { z: f64 },

    #[error("infeasible jump: {0}")]
    InfeasibleJump(String),

    #[error("state space for n = {n} has about {estimate:.3e} states, above the enumeration cap n <= {cap}")]
    StateSpaceTooLarge { n: usize, cap: usize, estimate: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step size underflow at t = {t} (h = {h:e}); the system is too stiff, reduce the truncation size or the rates")]
    Stiffness { t: f64, h: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("ODE truncation I = {truncation} is inadequate: mass beyond I/2 reached {tail_mass:e}; rerun with a larger truncation")]
    TruncationInadequate { truncation: usize, tail_mass: f64 },

    #[error("generator is singular; the chain is reducible")]
    Reducible,

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("invalid threshold sequence: {0}")]
    InvalidThresholds(String),

    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
