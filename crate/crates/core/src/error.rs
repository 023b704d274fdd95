use thiserror::Error;

/// Errors raised by the models, the optimizer and the scenario loader.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate lens: waist-location denominator {denominator:e} below tolerance")]
    DegenerateLens { denominator: f64 },

    #[error("eye-safety enclosure factor {eta:e} underflows")]
    EtaUnderflow { eta: f64 },

    #[error("target BER {ber} outside (0, 0.2)")]
    InvalidBer { ber: f64 },

    #[error("frame needs {expected} bits, got {actual}")]
    BitCountMismatch { expected: usize, actual: usize },

    #[error("unsupported constellation size {0}")]
    UnsupportedConstellation(usize),

    #[error("1 - epsilon = {required} exceeds retained probability mass {retained}")]
    EpsilonUnreachable { required: f64, retained: f64 },

    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("required floor power {required:e} W exceeds the maximum {max:e} W")]
    InfeasibleFloor { required: f64, max: f64 },

    #[error("rate is zero at the linearization point")]
    ZeroRate,

    #[error("no user is served")]
    EmptyNetwork,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

pub(crate) fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and >= 0, got {value}"),
        })
    }
}
