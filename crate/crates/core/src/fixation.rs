//! First-order correction to the fixation probability of the high-mutation
//! modifier `h` for small `σ²/γ`.
//!
//! `P(x_h(∞) = 1) ≈ x + (σ²/γ) · correction`, where the correction is given
//! in two algebraically equivalent forms, [`correction_t3`] and
//! [`correction_cor1`]. They are written out separately so that each one
//! checks the other.

use crate::error::{Error, Result};
use crate::model::InitialCondition;
use crate::rng::rng_from_seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Arguments of the correction. The mutation rates may come in either order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionInput {
    pub init: InitialCondition,
    pub theta_l: f64,
    pub theta_h: f64,
    pub r: f64,
}

impl CorrectionInput {
    pub fn new(x: f64, p: f64, q: f64, r: f64, theta_l: f64, theta_h: f64) -> Result<Self> {
        let c = Self {
            init: InitialCondition { x, p, q },
            theta_l,
            theta_h,
            r,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        for (name, v) in [("theta_l", self.theta_l), ("theta_h", self.theta_h)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain { name, value: v, range: "[0, inf)" });
            }
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Domain { name: "r", value: self.r, range: "[0, 1]" });
        }
        Ok(())
    }

    fn unpack(&self) -> (f64, f64, f64, f64, f64, f64) {
        let InitialCondition { x, p, q } = self.init;
        (x, p, q, self.r, self.theta_l, self.theta_h)
    }

    /// Swaps the roles of the two modifier alleles.
    pub fn mirrored(&self) -> Self {
        let InitialCondition { x, p, q } = self.init;
        Self {
            init: InitialCondition { x: 1.0 - x, p: q, q: p },
            theta_l: self.theta_h,
            theta_h: self.theta_l,
            r: self.r,
        }
    }
}

/// The correction in its expanded form.
pub fn correction_t3(c: &CorrectionInput) -> f64 {
    let (x, p, q, r, tl, th) = c.unpack();
    let dq = q - r;
    let dp = p - r;
    let lead = (2.0 * r - 1.0) * dq * (1.0 + 2.0 * tl) / ((1.0 + tl) * (3.0 + 2.0 * tl))
        - (2.0 * r - 1.0) * dp * (1.0 + 2.0 * th) / ((1.0 + th) * (3.0 + 2.0 * th));
    let quad = (1.0 - x) * dq * dq / (3.0 + 2.0 * tl) - x * dp * dp / (3.0 + 2.0 * th)
        + (2.0 * x - 1.0) * dp * dq / (3.0 + tl + th)
        + r * (1.0 - r) * (1.0 / (3.0 + 2.0 * tl) - 1.0 / (3.0 + 2.0 * th));
    x * (1.0 - x) * (lead + 2.0 * quad)
}

/// The correction factored so that every term carries `p - q` or
/// `θ_h - θ_ℓ`.
pub fn correction_cor1(c: &CorrectionInput) -> f64 {
    let (x, p, q, r, tl, th) = c.unpack();
    let gap = th - tl;
    let skew = 1.0 - 2.0 * r;
    let by_allele = (p - q)
        * (skew * (1.0 + 2.0 * tl) / ((3.0 + 2.0 * tl) * (1.0 + tl))
            + 2.0 * (1.0 - x) * (r - q) / (3.0 + 2.0 * tl)
            + 2.0 * x * (r - p) / (3.0 + 2.0 * th));
    let rate_linear = -skew
        * (r - p)
        * gap
        * (-2.0 * (7.0 + 2.0 * tl + 2.0 * th) / ((2.0 + th) * (3.0 + 2.0 * th) * (2.0 + tl) * (3.0 + 2.0 * tl))
            + (2.0 - th * tl) / ((2.0 + tl) * (1.0 + tl) * (2.0 + th) * (1.0 + th)));
    let rate_quadratic = 2.0 * (r - q) * (r - p) * gap / (3.0 + th + tl)
        * ((1.0 - x) / (3.0 + 2.0 * tl) + x / (3.0 + 2.0 * th));
    let balance = 4.0 * r * (1.0 - r) * gap / ((3.0 + 2.0 * tl) * (3.0 + 2.0 * th));
    x * (1.0 - x) * (by_allele + rate_linear + rate_quadratic + balance)
}

/// `x + (σ²/γ) · correction`, clipped to `[0, 1]`.
pub fn approx_fixation(c: &CorrectionInput, sigma: f64, gamma: f64) -> f64 {
    (c.init.x + sigma * sigma / gamma * correction_t3(c)).clamp(0.0, 1.0)
}

/// `n` inputs with `x, p, q, r` uniform on `[0, 1]` and both mutation rates
/// uniform on `[0, 10]`.
pub fn random_inputs(seed: u64, n: usize) -> Vec<CorrectionInput> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let mut u = || rng.random::<f64>();
            let (x, p, q, r) = (u(), u(), u(), u());
            let (tl, th) = (10.0 * u(), 10.0 * u());
            CorrectionInput { init: InitialCondition { x, p, q }, theta_l: tl, theta_h: th, r }
        })
        .collect()
}

pub const SYMMETRY_TOL: f64 = 1e-12;

/// Outcome of one symmetry property over all draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub name: String,
    pub passed: bool,
    pub max_deviation: f64,
    /// First input that violated the property.
    pub counterexample: Option<CorrectionInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub draws: u64,
    pub checks: Vec<SymmetryCheck>,
}

impl SymmetryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Tracker {
    name: &'static str,
    max: f64,
    first_bad: Option<CorrectionInput>,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self { name, max: 0.0, first_bad: None }
    }

    fn record(&mut self, dev: f64, input: CorrectionInput) {
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        self.max = self.max.max(dev);
        if dev >= SYMMETRY_TOL && self.first_bad.is_none() {
            self.first_bad = Some(input);
        }
    }

    fn finish(self) -> SymmetryCheck {
        SymmetryCheck {
            name: self.name.to_string(),
            passed: self.first_bad.is_none(),
            max_deviation: self.max,
            counterexample: self.first_bad,
        }
    }
}

/// Checks four structural properties of the correction on random inputs:
/// sign flip when the modifier alleles swap roles, zero at `p = q = r ∈ {0,1}`,
/// independence of `r` without B-locus mutation, and zero when the two
/// modifier backgrounds coincide.
pub fn symmetry_battery(seed: u64, draws: u64) -> Result<SymmetryReport> {
    symmetry_battery_with(seed, draws, correction_t3)
}

/// [`symmetry_battery`] for an arbitrary formula.
pub fn symmetry_battery_with(seed: u64, draws: u64, f: impl Fn(&CorrectionInput) -> f64) -> Result<SymmetryReport> {
    if draws == 0 {
        return Err(Error::Input("symmetry battery needs at least one draw".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut flip = Tracker::new("sign flip under (theta_h<->theta_l, p<->q, x<->1-x)");
    let mut fixed = Tracker::new("zero at p=q=r in {0,1}");
    let mut r_free = Tracker::new("r-independence at theta_h=theta_l=0");
    let mut same = Tracker::new("zero at theta_h=theta_l and p=q");
    for _ in 0..draws {
        let mut u = || rng.random::<f64>();
        let (x, p, q, r) = (u(), u(), u(), u());
        let (tl, th) = (10.0 * u(), 10.0 * u());
        let r_alt: [f64; 4] = [u(), u(), u(), u()];
        let corner = if u() < 0.5 { 0.0 } else { 1.0 };

        let c = CorrectionInput { init: InitialCondition { x, p, q }, theta_l: tl, theta_h: th, r };
        flip.record((f(&c) + f(&c.mirrored())).abs(), c);

        let c = CorrectionInput { init: InitialCondition { x, p: corner, q: corner }, theta_l: tl, theta_h: th, r: corner };
        fixed.record(f(&c).abs(), c);

        let c = CorrectionInput { init: InitialCondition { x, p, q }, theta_l: 0.0, theta_h: 0.0, r };
        let base = f(&c);
        let spread = r_alt
            .iter()
            .map(|&r| f(&CorrectionInput { r, ..c }) - base)
            .fold(0.0_f64, |m, d| m.max(d.abs()));
        r_free.record(spread, c);

        let c = CorrectionInput { init: InitialCondition { x, p, q: p }, theta_l: tl, theta_h: tl, r };
        same.record(f(&c).abs(), c);
    }
    Ok(SymmetryReport {
        draws,
        checks: vec![flip.finish(), fixed.finish(), r_free.finish(), same.finish()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn input(x: f64, p: f64, q: f64, r: f64, tl: f64, th: f64) -> CorrectionInput {
        CorrectionInput::new(x, p, q, r, tl, th).unwrap()
    }

    #[test]
    fn balanced_example() {
        let c = input(0.5, 0.5, 0.5, 0.5, 0.0, 1.0);
        assert_abs_diff_eq!(correction_t3(&c), 1.0 / 60.0, epsilon = 1e-15);
        assert_abs_diff_eq!(correction_cor1(&c), 1.0 / 60.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_cases() {
        for &(tl, th) in &[(0.0, 0.0), (0.3, 2.0), (5.0, 1.0)] {
            assert_abs_diff_eq!(correction_t3(&input(0.3, 0.0, 0.0, 0.0, tl, th)), 0.0, epsilon = 1e-15);
        }
        let c = input(0.7, 0.2, 0.2, 0.9, 1.5, 1.5);
        assert_abs_diff_eq!(correction_t3(&c), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(correction_cor1(&c), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn balance_closed_form() {
        let mut rng = rng_from_seed(4);
        for _ in 0..1000 {
            let (x, r) = (rng.random::<f64>(), rng.random::<f64>());
            let (tl, th) = (10.0 * rng.random::<f64>(), 10.0 * rng.random::<f64>());
            let want = 4.0 * x * (1.0 - x) * r * (1.0 - r) * (th - tl) / ((3.0 + 2.0 * tl) * (3.0 + 2.0 * th));
            assert_abs_diff_eq!(correction_t3(&input(x, r, r, r, tl, th)), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn approx_fixation_examples() {
        let c = input(0.5, 0.5, 0.5, 0.5, 0.0, 1.0);
        assert_abs_diff_eq!(approx_fixation(&c, 0.06f64.sqrt(), 1.0), 0.501, epsilon = 1e-12);
        assert_eq!(approx_fixation(&c, 0.0, 1.0), 0.5);
        assert_eq!(approx_fixation(&input(0.0, 0.3, 0.9, 0.1, 0.0, 4.0), 2.0, 1.0), 0.0);
        assert_eq!(approx_fixation(&input(1.0, 0.3, 0.9, 0.1, 0.0, 4.0), 2.0, 1.0), 1.0);
    }

    #[test]
    fn battery_passes() {
        let rep = symmetry_battery(1, 1000).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.checks.len(), 4);
    }

    #[test]
    fn battery_catches_perturbed_formula() {
        let rep = symmetry_battery_with(1, 1000, |c| correction_t3(c) + 1e-6 * c.r).unwrap();
        assert!(!rep.passed());
        let bad = rep.checks.iter().find(|c| !c.passed).unwrap();
        assert!(bad.counterexample.is_some());
    }

    #[test]
    fn battery_rejects_zero_draws() {
        assert!(symmetry_battery(1, 0).is_err());
    }

    #[test]
    fn input_validation() {
        assert!(CorrectionInput::new(1.2, 0.5, 0.5, 0.5, 0.0, 1.0).is_err());
        assert!(CorrectionInput::new(0.5, 0.5, 0.5, -0.1, 0.0, 1.0).is_err());
        assert!(CorrectionInput::new(0.5, 0.5, 0.5, 0.5, -1.0, 1.0).is_err());
        // the rates may be given in either order
        assert!(CorrectionInput::new(0.5, 0.5, 0.5, 0.5, 3.0, 1.0).is_ok());
    }
}
