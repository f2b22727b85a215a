use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("law `{0}` is not enumerable; exact mode needs a finite outcome list")]
    NotEnumerable(String),

    #[error("law `{0}` is not a lattice law")]
    NotLattice(String),

    #[error("boundary normalisation violated: E sum e^V = {mean_exp} (expected 1 within {tol})")]
    NotBoundary { mean_exp: f64, tol: f64 },

    #[error("calibration infeasible: {0}")]
    Infeasible(String),

    #[error("sampler produced a non-finite displacement ({0})")]
    NonFinite(f64),

    #[error("xi is undefined for a node without children")]
    NoChildren,

    #[error("invalid node id")]
    InvalidNode,

    #[error("nodes belong to different trees")]
    ForeignNode,

    #[error("population overflow: {size} exceeds cap {cap}")]
    PopulationOverflow { size: u128, cap: u128 },

    #[error("invalid prune rule: {0}")]
    InvalidPrune(String),

    #[error("enumeration too large: {count} configurations exceeds cap {cap}")]
    EnumerationCap { count: f64, cap: f64 },

    #[error("DP memory bound exceeded: {0} lattice sites")]
    MemoryBound(usize),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all replicates went extinct")]
    AllExtinct,

    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("cell {cell}: {source}")]
    Cell { cell: String, source: Box<Error> },
}

impl Error {
    /// Attach the coordinates of the grid cell that failed.
    pub fn in_cell(self, cell: impl Into<String>) -> Error {
        Error::Cell {
            cell: cell.into(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
