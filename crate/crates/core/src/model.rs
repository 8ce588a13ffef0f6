//! Four-type state space, model constants and SDE coefficients.
//!
//! Types are always ordered `(ℓ0, ℓ1, h0, h1)`: A-locus allele `ℓ`/`h` sets the
//! mutation rate at the B-locus, B-locus allele `0`/`1` is under fluctuating
//! selection. Fitness of B-type 0 is `+Z/2`, of B-type 1 is `-Z/2`.

use crate::error::{check_range, Error, Result};
use serde::{Deserialize, Serialize};

pub const L0: usize = 0;
pub const L1: usize = 1;
pub const H0: usize = 2;
pub const H1: usize = 3;

/// Number of independent Brownian drivers in the limiting system
/// (six resampling pairs plus the averaged environment).
pub const LIMIT_NOISES: usize = 7;

/// Tolerance used when checking that a state sums to one.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A-locus allele.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modifier {
    Low,
    High,
}

impl Modifier {
    pub fn of_type(idx: usize) -> Self {
        if idx < 2 {
            Modifier::Low
        } else {
            Modifier::High
        }
    }
}

/// B-locus allele of type index `idx`.
#[inline]
pub fn b_allele(idx: usize) -> usize {
    idx & 1
}

#[inline]
pub fn type_index(a: Modifier, b: usize) -> usize {
    debug_assert!(b < 2);
    match a {
        Modifier::Low => b,
        Modifier::High => 2 + b,
    }
}

/// Model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Selection intensity σ.
    pub sigma: f64,
    /// Environmental switch rate γ.
    pub gamma: f64,
    /// B-locus mutation rate carried by `ℓ`.
    pub theta_l: f64,
    /// B-locus mutation rate carried by `h`.
    pub theta_h: f64,
    /// Probability that a mutation yields B-type 0.
    pub r: f64,
    /// Pre-limit speed parameter N.
    pub n_scale: u32,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            gamma: 1.0,
            theta_l: 0.0,
            theta_h: 0.0,
            r: 0.5,
            n_scale: 1,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        check_range("sigma", self.sigma, 0.0, f64::MAX, "[0, inf)")?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Domain {
                name: "gamma",
                value: self.gamma,
                range: "(0, inf)",
            });
        }
        check_range("theta_l", self.theta_l, 0.0, f64::MAX, "[0, inf)")?;
        check_range("theta_h", self.theta_h, 0.0, f64::MAX, "[0, inf)")?;
        if self.theta_l > self.theta_h {
            return Err(Error::Domain {
                name: "theta_l",
                value: self.theta_l,
                range: "[0, theta_h]",
            });
        }
        check_range("r", self.r, 0.0, 1.0, "[0, 1]")?;
        if self.n_scale < 1 {
            return Err(Error::Domain {
                name: "n_scale",
                value: self.n_scale as f64,
                range: "[1, inf)",
            });
        }
        Ok(())
    }

    /// σ²/γ, the strength of the averaged selection.
    pub fn s2g(&self) -> f64 {
        self.sigma * self.sigma / self.gamma
    }

    /// Whether 2σ²/γ < 1.
    pub fn non_explosive(&self) -> bool {
        2.0 * self.s2g() < 1.0
    }

    #[inline]
    pub fn theta_of(&self, a: Modifier) -> f64 {
        match a {
            Modifier::Low => self.theta_l,
            Modifier::High => self.theta_h,
        }
    }
}

/// Frequencies of `(ℓ0, ℓ1, h0, h1)` on the 3-simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexState(pub(crate) [f64; 4]);

impl SimplexState {
    pub fn new(x_l0: f64, x_l1: f64, x_h0: f64, x_h1: f64) -> Result<Self> {
        Self::from_array([x_l0, x_l1, x_h0, x_h1])
    }

    pub fn from_array(x: [f64; 4]) -> Result<Self> {
        const NAMES: [&str; 4] = ["x_l0", "x_l1", "x_h0", "x_h1"];
        for (name, &v) in NAMES.iter().zip(&x) {
            check_range(name, v, 0.0, 1.0, "[0, 1]")?;
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain {
                name: "sum of frequencies",
                value: sum,
                range: "1 ± 1e-12",
            });
        }
        Ok(Self(x))
    }

    pub fn uniform() -> Self {
        Self([0.25; 4])
    }

    #[inline]
    pub fn as_array(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn x_l0(&self) -> f64 {
        self.0[L0]
    }
    pub fn x_l1(&self) -> f64 {
        self.0[L1]
    }
    pub fn x_h0(&self) -> f64 {
        self.0[H0]
    }
    pub fn x_h1(&self) -> f64 {
        self.0[H1]
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
    }

    pub fn marginals(&self) -> Marginals {
        marginals(self)
    }
}

/// Parametrization `(x, p, q)`: frequency of `h`, share of B-type 0 among
/// `h`, share of B-type 0 among `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub x: f64,
    pub p: f64,
    pub q: f64,
}

impl InitialCondition {
    pub fn new(x: f64, p: f64, q: f64) -> Result<Self> {
        let init = Self { x, p, q };
        init.validate()?;
        Ok(init)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("x", self.x, 0.0, 1.0, "[0, 1]")?;
        check_range("p", self.p, 0.0, 1.0, "[0, 1]")?;
        check_range("q", self.q, 0.0, 1.0, "[0, 1]")
    }

    pub fn to_state(&self) -> Result<SimplexState> {
        to_state(self)
    }
}

/// Maps `(x, p, q)` to `(q(1-x), (1-q)(1-x), px, (1-p)x)`.
pub fn to_state(init: &InitialCondition) -> Result<SimplexState> {
    init.validate()?;
    let InitialCondition { x, p, q } = *init;
    let l = 1.0 - x;
    Ok(SimplexState([q * l, l - q * l, p * x, x - p * x]))
}

/// Aggregate frequencies and linkage disequilibrium of a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub x_h: f64,
    pub x_l: f64,
    pub x_0: f64,
    pub x_1: f64,
    /// `x_h0 x_l1 - x_h1 x_l0`.
    pub d: f64,
}

pub fn marginals(s: &SimplexState) -> Marginals {
    let [l0, l1, h0, h1] = s.0;
    let x_h = h0 + h1;
    let x_0 = h0 + l0;
    Marginals {
        x_h,
        x_l: 1.0 - x_h,
        x_0,
        x_1: 1.0 - x_0,
        d: h0 * l1 - h1 * l0,
    }
}

#[inline]
fn b_marginals(x: &[f64; 4]) -> (f64, f64) {
    (x[L0] + x[H0], x[L1] + x[H1])
}

#[inline]
fn mutation_drift(x: &[f64; 4], p: &ModelParams) -> [f64; 4] {
    let r = p.r;
    let fl = p.theta_l * (r * x[L1] - (1.0 - r) * x[L0]);
    let fh = p.theta_h * (r * x[H1] - (1.0 - r) * x[H0]);
    [fl, -fl, fh, -fh]
}

/// dt-coefficients of the pre-limit system in environment `z = ±1`.
pub fn drift_prelimit(s: &SimplexState, z: f64, p: &ModelParams) -> [f64; 4] {
    drift_prelimit_raw(&s.0, z, p)
}

#[inline]
pub(crate) fn drift_prelimit_raw(x: &[f64; 4], z: f64, p: &ModelParams) -> [f64; 4] {
    let (x0, x1) = b_marginals(x);
    let k = p.sigma * p.n_scale as f64 * z;
    let m = mutation_drift(x, p);
    [
        k * x[L0] * x1 + m[0],
        -k * x[L1] * x0 + m[1],
        k * x[H0] * x1 + m[2],
        -k * x[H1] * x0 + m[3],
    ]
}

/// dt-coefficients of the limiting diffusion.
pub fn drift_limit(s: &SimplexState, p: &ModelParams) -> [f64; 4] {
    drift_limit_raw(&s.0, p)
}

#[inline]
pub(crate) fn drift_limit_raw(x: &[f64; 4], p: &ModelParams) -> [f64; 4] {
    let (x0, x1) = b_marginals(x);
    let k = p.s2g();
    let m = mutation_drift(x, p);
    let up = k * x1 * (x1 - x0);
    let down = k * x0 * (x0 - x1);
    [
        x[L0] * up + m[0],
        x[L1] * down + m[1],
        x[H0] * up + m[2],
        x[H1] * down + m[3],
    ]
}

/// 4×7 noise matrix of the limiting diffusion. Columns are `W1..W6` (the
/// resampling pairs `ℓ0ℓ1, ℓ0h0, ℓ0h1, ℓ1h0, ℓ1h1, h0h1`) followed by the
/// environment noise `W`.
pub fn diffusion_limit(s: &SimplexState, p: &ModelParams) -> [[f64; LIMIT_NOISES]; 4] {
    diffusion_limit_raw(&s.0, p)
}

/// Resampling pairs in column order; the first index gets `+`, the second `-`.
pub(crate) const PAIRS: [(usize, usize); 6] =
    [(L0, L1), (L0, H0), (L0, H1), (L1, H0), (L1, H1), (H0, H1)];

/// `sqrt(x_a x_b)` with each factor clamped at 0, so a component that has
/// overshot below the boundary carries no resampling noise.
#[inline]
pub(crate) fn resampling_coefficients(x: &[f64; 4]) -> [f64; 6] {
    let mut c = [0.0; 6];
    for (k, &(a, b)) in PAIRS.iter().enumerate() {
        c[k] = (x[a].max(0.0) * x[b].max(0.0)).sqrt();
    }
    c
}

#[inline]
pub(crate) fn environment_column(x: &[f64; 4], p: &ModelParams) -> [f64; 4] {
    let (x0, x1) = b_marginals(x);
    let c = p.sigma * (2.0 / p.gamma).sqrt();
    [c * x[L0] * x1, -c * x[L1] * x0, c * x[H0] * x1, -c * x[H1] * x0]
}

pub(crate) fn diffusion_limit_raw(x: &[f64; 4], p: &ModelParams) -> [[f64; LIMIT_NOISES]; 4] {
    let mut m = [[0.0; LIMIT_NOISES]; 4];
    for (k, (&(a, b), c)) in PAIRS.iter().zip(resampling_coefficients(x)).enumerate() {
        m[a][k] = c;
        m[b][k] = -c;
    }
    let env = environment_column(x, p);
    for (row, v) in m.iter_mut().zip(env) {
        row[LIMIT_NOISES - 1] = v;
    }
    m
}

/// Instantaneous covariance of the limiting diffusion, written out directly:
/// `(δ_{ai,bj} - x_ai) x_bj + (-1)^{i+j} (2σ²/γ) x_ai x_bj x_{1-i} x_{1-j}`.
pub fn covariance_limit(s: &SimplexState, p: &ModelParams) -> [[f64; 4]; 4] {
    let x = &s.0;
    let (x0, x1) = b_marginals(x);
    let other = |i: usize| if b_allele(i) == 0 { x1 } else { x0 };
    let sign = |i: usize, j: usize| if (b_allele(i) + b_allele(j)).is_multiple_of(2) { 1.0 } else { -1.0 };
    let k = 2.0 * p.s2g();
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let delta = if i == j { 1.0 } else { 0.0 };
            c[i][j] = (delta - x[i]) * x[j] + sign(i, j) * k * x[i] * x[j] * other(i) * other(j);
        }
    }
    c
}

/// Settles a raw Euler update on the A-locus. Once the `h` total leaves
/// `(0, 1)` the class it empties is extinct for good: its entries are set to
/// zero and the surviving class is rescaled to total 1. Inside a surviving
/// class small negative entries are kept, so the mass a clamp would add is
/// not fed back into the dynamics.
#[inline]
pub(crate) fn settle(y: [f64; 4]) -> [f64; 4] {
    let h = y[H0] + y[H1];
    if h <= 0.0 {
        let l = y[L0] + y[L1];
        [y[L0] / l, y[L1] / l, 0.0, 0.0]
    } else if h >= 1.0 {
        [0.0, 0.0, y[H0] / h, y[H1] / h]
    } else {
        y
    }
}

/// Maps a simulation state to the simplex by clamping the B-type 0 share
/// inside each A-class to `[0, class total]`. Class totals are untouched.
#[inline]
pub(crate) fn project(raw: [f64; 4]) -> [f64; 4] {
    let h = (raw[H0] + raw[H1]).clamp(0.0, 1.0);
    let l = 1.0 - h;
    let h0 = raw[H0].clamp(0.0, h);
    let l0 = raw[L0].clamp(0.0, l);
    [l0, l - l0, h0, h - h0]
}
