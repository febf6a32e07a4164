use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("paths live on different grids")]
    GridMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },
    #[error("{what} needs {size} items, above the cap of {cap}")]
    CapExceeded { what: &'static str, size: u128, cap: u128 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stability restriction violated: dt_pde = {dt} exceeds {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("cumulative consumption decreases at step {0}")]
    DecreasingConsumption(usize),
    #[error("interval [{rho}, {tau}] straddles a partition breakpoint")]
    CellStraddle { rho: usize, tau: usize },
    #[error("test function is not tangent from the requested side")]
    NotTangent,
    #[error("unknown name: {0}")]
    UnknownName(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_cap(what: &'static str, size: u128, cap: u128) -> Result<()> {
    if size > cap {
        Err(Error::CapExceeded { what, size, cap })
    } else {
        Ok(())
    }
}

/// `base^exp` saturating at `u128::MAX`.
pub(crate) fn pow_sat(base: usize, exp: usize) -> u128 {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base as u128);
    }
    acc
}
