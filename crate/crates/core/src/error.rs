use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositiveDimension { name: &'static str, value: f64 },

    #[error("target distance {distance} m is not inside the RIS near field (Rayleigh distance {bound} m)")]
    NearFieldViolation { distance: f64, bound: f64 },

    #[error("receiver is {distance} m from the target center, must exceed the target Rayleigh distance {bound} m")]
    FarFieldViolation { distance: f64, bound: f64 },

    #[error("invalid sampling: {0}")]
    InvalidSampling(String),

    #[error("kernel of {rows}x{cols} entries exceeds the configured cap of {cap} entries")]
    KernelTooLarge { rows: usize, cols: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("Green tensor evaluated at coincident points")]
    CoincidentPoints,

    #[error("unsupported Hadamard order {0} (must be a power of two)")]
    UnsupportedOrder(usize),

    #[error("{measurements} measurements cannot encode {points} target points (need at least {required})")]
    InsufficientMeasurements {
        measurements: usize,
        points: usize,
        required: usize,
    },

    #[error("mask set is empty")]
    EmptyMaskSet,

    #[error("SVD did not converge")]
    SvdFailure,

    #[error("regularized solution is identically zero")]
    ZeroSolution,

    #[error("kind mismatch: {0}")]
    KindMismatch(String),

    #[error("measurement set is empty")]
    EmptySet,

    #[error("ground truth is identically zero")]
    ZeroTruth,

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("image is {found_x}x{found_y}, grid is {expected_x}x{expected_y}")]
    SizeMismatch {
        expected_x: usize,
        expected_y: usize,
        found_x: usize,
        found_y: usize,
    },

    #[error("malformed volume: {0}")]
    MalformedVolume(String),

    #[error("malformed binary file: {0}")]
    MalformedFile(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
