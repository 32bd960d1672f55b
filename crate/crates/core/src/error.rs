use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("trajectory lengths differ: estimate {estimate}, reference {reference}")]
    LengthMismatch { estimate: usize, reference: usize },
    #[error("alignment needs at least 3 poses, got {0}")]
    TooFewPoses(usize),
    #[error("degenerate geometry: translations are collinear or coincident")]
    DegenerateGeometry,
}

#[derive(Debug, Error, PartialEq)]
pub enum RangeImageError {
    #[error("invalid projection parameters: {0}")]
    InvalidParams(String),
    #[error("pixel ({u}, {v}) is out of bounds")]
    PixelOutOfBounds { u: usize, v: usize },
    #[error("range must be positive, got {0}")]
    NonPositiveRange(f64),
    #[error("normal window must be 3 or 5, got {0}")]
    InvalidWindow(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ImuError {
    #[error("preintegration needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("IMU timestamps not strictly increasing at sample {index} (t = {t})")]
    NonMonotonic { index: usize, t: f64 },
    #[error("IMU data does not cover [{start}, {end}]")]
    Uncovered { start: f64, end: f64 },
    #[error("gravity bootstrap failed: {0}")]
    Bootstrap(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("insufficient overlap: {found} correspondences at iteration {iteration}, need {required}")]
    InsufficientOverlap {
        found: usize,
        required: usize,
        iteration: usize,
    },
    #[error("non-finite normal equations at iteration {0}")]
    Numerical(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum DegeneracyError {
    #[error("normal covariance needs at least one correspondence")]
    NoCorrespondences,
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("factor references missing node {0}")]
    DanglingNode(usize),
    #[error("graph has no prior factor")]
    NoPrior,
    #[error("graph is disconnected: node {0} is not linked to a prior")]
    Disconnected(usize),
    #[error("linear system stayed indefinite after damping reached {0:e}")]
    Indefinite(f64),
    #[error("covariance is not symmetric positive definite")]
    BadCovariance,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("dimensions must be positive: {0}")]
    InvalidDimensions(String),
    #[error("unknown scene preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: timestamps out of order")]
    TimeOrder { path: String, line: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
}

/// Any failure surfaced by the pipeline or command-line entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    RangeImage(#[from] RangeImageError),
    #[error(transparent)]
    Imu(#[from] ImuError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Degeneracy(#[from] DegeneracyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
