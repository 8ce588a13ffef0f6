use thiserror::Error;

/// Errors raised by the simulation and oracle routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A scalar argument lies outside its admissible range.
    #[error("{name} = {value} is outside its admissible range {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    /// The Euler step size is too coarse for the rates in play.
    #[error("step-size guard violated: {product} = {value:.6} must be < 0.1")]
    StepGuard { product: &'static str, value: f64 },

    /// The dual process requires 2 sigma^2 / gamma < 1.
    #[error("2*sigma^2/gamma = {0:.6} must be < 1 for the dual process to be non-explosive")]
    DualExplosion(f64),

    /// Structurally invalid input (wrong lengths, too few replicas, ...).
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
    range: &'static str,
) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::Domain { name, value, range })
    }
}
