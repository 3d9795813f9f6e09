use thiserror::Error;

/// Errors produced by the solver and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite initial data at x = {0}")]
    NonFiniteInitialData(f64),
    #[error("domain exhausted")]
    DomainExhausted,
    #[error("numerical blow-through at level {level}")]
    NumericalBlowThrough { level: usize },
    #[error("no blow-up detected at x = {0}")]
    NoBlowupDetected(f64),
    #[error("point ({0}, {1}) outside domain")]
    OutsideDomain(f64, f64),
    #[error("apex ({0}, {1}) is not a valid grid point")]
    InvalidApex(f64, f64),
    #[error("insufficient cone coverage at x0 = {0}")]
    InsufficientConeCoverage(f64),
    #[error("hypotheses not met: {0}")]
    HypothesesNotMet(String),
    #[error("no contraction at T = {0}")]
    NoContraction(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
