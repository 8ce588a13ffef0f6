use crate::error::{Error, Result};
use crate::model::SimplexState;
use serde::{Deserialize, Serialize};

/// A time-indexed path of states. `env` carries the environment sign and is
/// only present for pre-limit paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SimplexState>,
    pub env: Option<Vec<i8>>,
    pub seed: u64,
}

impl Trajectory {
    pub(crate) fn with_capacity(n: usize, seed: u64, with_env: bool) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            env: with_env.then(|| Vec::with_capacity(n)),
            seed,
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: [f64; 4], env: Option<i8>) {
        self.times.push(t);
        self.states.push(SimplexState(x));
        if let (Some(v), Some(z)) = (self.env.as_mut(), env) {
            v.push(z);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of Euler increments in the path.
    pub fn steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn last(&self) -> Option<&SimplexState> {
        self.states.last()
    }

    /// Checks the structural invariants: strictly increasing times, matching
    /// lengths, valid states.
    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.times.len() {
            return Err(Error::Input("states and times differ in length".into()));
        }
        if let Some(env) = &self.env {
            if env.len() != self.times.len() {
                return Err(Error::Input("env and times differ in length".into()));
            }
            if env.iter().any(|&z| z != 1 && z != -1) {
                return Err(Error::Input("environment sign must be ±1".into()));
            }
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("times must be strictly increasing".into()));
        }
        if let Some(i) = self.states.iter().position(|s| !s.is_valid()) {
            return Err(Error::Input(format!("state {i} is off the simplex")));
        }
        Ok(())
    }
}

/// Splits `[0, horizon]` into equal steps no longer than `dt`.
pub(crate) fn time_grid(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Domain {
            name: "horizon",
            value: horizon,
            range: "(0, inf)",
        });
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Domain {
            name: "dt",
            value: dt,
            range: "(0, inf)",
        });
    }
    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}
