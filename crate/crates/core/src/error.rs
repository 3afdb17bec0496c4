use std::io;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("user angle {0} deg outside [0, 180]")]
    AngleOutOfRange(f64),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic or truncated header")]
    BadMagic,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no tabulated coefficients for IBO {0} dB")]
    UnknownIbo(f64),

    #[error("least-squares basis is numerically singular (condition number {0:.3e})")]
    IllConditionedBasis(f64),

    #[error("negative SNIDR {0}")]
    NegativeSnidr(f64),

    #[error("cannot normalize an all-zero precoding matrix")]
    ZeroMatrix,

    #[error("channel is identically zero")]
    ZeroChannel,

    #[error("channel Gram matrix is singular")]
    SingularChannel,

    #[error("saturated antennas carry zero channel gain")]
    ZeroGainSaturatedAntenna,

    #[error("output power {reachable:.4} cannot reach the target {target:.4}")]
    NoBracket { reachable: f64, target: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
