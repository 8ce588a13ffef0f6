//! Simulation and analysis of a modifier of mutation rate under rapidly
//! fluctuating selection.
//!
//! Four types `ℓ0, ℓ1, h0, h1` combine a modifier allele (`ℓ` or `h`, which
//! sets the mutation rate at the selected locus) with a selected allele (`0`
//! or `1`). The crate provides:
//!
//! * [`prelimit`]: the system with an explicit telegraph environment,
//! * [`limit`]: the averaged diffusion, fixation estimates and checks of the
//!   aggregate dynamics,
//! * [`fixation`]: the closed-form first-order fixation correction,
//! * [`neutral`]: neutral moment integrals and a coalescent oracle,
//! * [`dual`]: a function-valued dual process used as an independent oracle.

pub mod dual;
pub mod error;
pub mod fixation;
pub mod limit;
pub mod model;
pub mod neutral;
pub mod par;
pub mod prelimit;
pub mod rng;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{InitialCondition, Marginals, Modifier, ModelParams, SimplexState};
pub use rng::SeedStream;
pub use stats::Estimate;
pub use trajectory::Trajectory;
