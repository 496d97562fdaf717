use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported dimension {0} (supported: 1..=4)")]
    UnsupportedDimension(usize),

    #[error("degenerate bandwidth: all raw kernel weights are below 1e-300")]
    DegenerateBandwidth,

    #[error("degenerate calibration: no eigenvalue of the contrast operator exceeds 1e-10")]
    DegenerateCalibration,

    #[error("calibration failed at distance {distance} (index {distance_index}), thresholds ({r}, {s}): {source}")]
    CalibrationFailed {
        distance: f64,
        distance_index: usize,
        r: usize,
        s: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration does not match dataset: {}", .0.join(", "))]
    CalibrationMismatch(Vec<String>),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("simulation setup failed: {0}")]
    SimulationSetup(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status for the command-line tool: 2 for configuration
    /// and argument errors, 3 for data errors, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::UnsupportedDimension(_) | Error::Config(_) => 2,
            Error::InvalidData(_) | Error::CalibrationMismatch(_) | Error::Io { .. } => 3,
            Error::DegenerateBandwidth
            | Error::DegenerateCalibration
            | Error::CalibrationFailed { .. }
            | Error::SingularDesign(_)
            | Error::SimulationSetup(_) => 4,
        }
    }

    /// Short machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::UnsupportedDimension(_) => "unsupported-dimension",
            Error::DegenerateBandwidth => "degenerate-bandwidth",
            Error::DegenerateCalibration => "degenerate-calibration",
            Error::CalibrationFailed { .. } => "calibration-failed",
            Error::CalibrationMismatch(_) => "calibration-mismatch",
            Error::InvalidData(_) => "invalid-data",
            Error::SingularDesign(_) => "singular-design",
            Error::SimulationSetup(_) => "simulation-setup",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
