use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure taxonomy for the whole toolkit. The CLI maps these onto process
/// exit codes, so variants are split by what the caller can do about them
/// rather than by which module raised them.
#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate fell outside the closed unit cube.
    #[error("coordinate {index} is {value}, outside [0, 1]")]
    OutsideDomain { index: usize, value: f64 },

    /// The point sits in one of the excluded slabs left of a grid hyperplane,
    /// so no cell contains it.
    #[error("coordinate {index} ({value}) lies in an excluded slab between cells")]
    TriflingRegion { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("network structure: {0}")]
    Structure(String),

    #[error("not supported: {0}")]
    Capability(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("checksum mismatch: {0}")]
    Checksum(String),

    /// The sample point is too close to a ReLU kink for finite differences to
    /// mean anything; the caller should resample.
    #[error("point is within {radius} of an activation kink; resample")]
    KinkProximity { radius: f64 },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}
