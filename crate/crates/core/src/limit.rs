//! Euler–Maruyama simulation of the limiting diffusion, fixation estimates
//! and consistency checks against the aggregate `x_h` / `x_0` dynamics.

use crate::error::{Error, Result};
#[cfg(test)]
use crate::model::diffusion_limit_raw;
use crate::model::{
    drift_limit_raw, environment_column, marginals, project, settle,
    resampling_coefficients, InitialCondition, ModelParams, SimplexState, H0, H1, L0, PAIRS,
};
use crate::par::map_replicas;
use crate::rng::{rng_from_seed, SeedStream, SimRng};
use crate::stats::{Estimate, Welford};
use crate::trajectory::{time_grid, Trajectory};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPS_ABSORB: f64 = 1e-4;
pub const DEFAULT_T_CAP: f64 = 200.0;

/// Largest admissible value of `dt (σ²/γ + θ_h + 1)`.
pub const STEP_GUARD: f64 = 0.1;

pub fn check_step(p: &ModelParams, dt: f64) -> Result<()> {
    let value = dt * (p.s2g() + p.theta_h + 1.0);
    if value < STEP_GUARD {
        Ok(())
    } else {
        Err(Error::StepGuard {
            product: "dt*(sigma^2/gamma + theta_h + 1)",
            value,
        })
    }
}

/// Default step: resolves both the resampling noise and the mutation rates.
pub fn default_dt(p: &ModelParams) -> f64 {
    1e-3_f64.min(0.01 / (p.s2g() + p.theta_h + 1.0))
}

/// One Euler step on the simulation state. Gaussian increments are drawn in
/// the fixed order `W1..W6, W`. The result may hold small negative entries
/// inside an A-class; emitted states go through `project`.
#[inline]
pub(crate) fn limit_step(x: &[f64; 4], p: &ModelParams, dt: f64, sqdt: f64, rng: &mut SimRng) -> [f64; 4] {
    let drift = drift_limit_raw(x, p);
    let c = resampling_coefficients(x);
    let mut y = [0.0; 4];
    for i in 0..4 {
        y[i] = x[i] + drift[i] * dt;
    }
    for (k, &(a, b)) in PAIRS.iter().enumerate() {
        let w: f64 = rng.sample(StandardNormal);
        let inc = c[k] * w * sqdt;
        y[a] += inc;
        y[b] -= inc;
    }
    let w: f64 = rng.sample(StandardNormal);
    let env = environment_column(x, p);
    for i in 0..4 {
        y[i] += env[i] * w * sqdt;
    }
    settle(y)
}

/// A single Euler step, exposed for benchmarks.
#[doc(hidden)]
pub fn limit_step_for_bench(x: &[f64; 4], p: &ModelParams, dt: f64, rng: &mut SimRng) -> [f64; 4] {
    limit_step(x, p, dt, dt.sqrt(), rng)
}

fn start(p: &ModelParams, init: &InitialCondition, dt: f64) -> Result<[f64; 4]> {
    p.validate()?;
    check_step(p, dt)?;
    Ok(*init.to_state()?.as_array())
}

/// Simulates one path of the limiting diffusion on `[0, horizon]`.
pub fn simulate_limit(
    p: &ModelParams,
    init: &InitialCondition,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut x = start(p, init, dt)?;
    let (steps, h) = time_grid(horizon, dt)?;
    let sqdt = h.sqrt();
    let mut rng = rng_from_seed(seed);
    let mut traj = Trajectory::with_capacity(steps + 1, seed, false);
    traj.push(0.0, x, None);
    for k in 1..=steps {
        x = limit_step(&x, p, h, sqdt, &mut rng);
        traj.push(k as f64 * h, project(x), None);
    }
    Ok(traj)
}

/// States of many independent paths at the requested (sorted) times.
/// Returns `out[replica][time_index]`.
pub fn limit_snapshots(
    p: &ModelParams,
    init: &InitialCondition,
    times: &[f64],
    dt: f64,
    replicas: u64,
    stream: SeedStream,
) -> Result<Vec<Vec<SimplexState>>> {
    let x0 = start(p, init, dt)?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| t.is_nan() || t < 0.0) {
        return Err(Error::Input("snapshot times must be non-negative and sorted".into()));
    }
    let marks: Vec<usize> = times.iter().map(|&t| (t / dt).round() as usize).collect();
    let steps = marks.last().copied().unwrap_or(0);
    let sqdt = dt.sqrt();
    Ok(map_replicas(replicas, |i| {
        let mut rng = stream.rng(i);
        let mut x = x0;
        let mut out = Vec::with_capacity(times.len());
        let mut next = 0;
        for k in 0..=steps {
            if k > 0 {
                x = limit_step(&x, p, dt, sqdt, &mut rng);
            }
            while next < marks.len() && marks[next] == k {
                out.push(SimplexState(project(x)));
                next += 1;
            }
        }
        out
    }))
}

/// Monte Carlo counterpart of the fixation probability of `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationEstimate {
    pub p_fix: f64,
    pub stderr: f64,
    pub replicas: u64,
    /// Fraction of replicas absorbed before `t_cap`.
    pub absorbed_fraction: f64,
    pub warning: Option<String>,
}

/// Outcome of one absorption run: the terminal score and whether the path
/// was actually absorbed.
fn run_to_absorption(
    x0: [f64; 4],
    p: &ModelParams,
    eps: f64,
    t_cap: f64,
    dt: f64,
    rng: &mut SimRng,
) -> (f64, bool) {
    let sqdt = dt.sqrt();
    let max_steps = (t_cap / dt).ceil() as u64;
    let mut x = x0;
    for _ in 0..=max_steps {
        let xh = x[H0] + x[H1];
        if xh <= eps {
            return (0.0, true);
        }
        if xh >= 1.0 - eps {
            return (1.0, true);
        }
        x = limit_step(&x, p, dt, sqdt, rng);
    }
    (x[H0] + x[H1], false)
}

/// Runs replicas until `x_h` leaves `(eps, 1 - eps)` or `t_cap` elapses.
/// The A-locus carries no mutation, so `x_h` is absorbed at 0 or 1.
pub fn estimate_fixation(
    p: &ModelParams,
    init: &InitialCondition,
    replicas: u64,
    eps_absorb: f64,
    t_cap: f64,
    dt: f64,
    stream: SeedStream,
) -> Result<FixationEstimate> {
    let x0 = start(p, init, dt)?;
    if replicas < 1000 {
        return Err(Error::Input(format!("estimate_fixation needs >= 1000 replicas, got {replicas}")));
    }
    if !(eps_absorb > 0.0 && eps_absorb <= 0.01) {
        return Err(Error::Domain {
            name: "eps_absorb",
            value: eps_absorb,
            range: "(0, 0.01]",
        });
    }
    if !(t_cap.is_finite() && t_cap > 0.0) {
        return Err(Error::Domain {
            name: "t_cap",
            value: t_cap,
            range: "(0, inf)",
        });
    }
    let outcomes = map_replicas(replicas, |i| {
        let mut rng = stream.rng(i);
        run_to_absorption(x0, p, eps_absorb, t_cap, dt, &mut rng)
    });
    Ok(summarize_fixation(&outcomes))
}

pub(crate) fn summarize_fixation(outcomes: &[(f64, bool)]) -> FixationEstimate {
    let n = outcomes.len() as u64;
    let p_fix = outcomes.iter().map(|o| o.0).sum::<f64>() / n as f64;
    let absorbed = outcomes.iter().filter(|o| o.1).count() as f64 / n as f64;
    let warning = (absorbed < 0.99).then(|| {
        format!(
            "only {:.2}% of replicas absorbed before t_cap; censored replicas count their final x_h",
            100.0 * absorbed
        )
    });
    FixationEstimate {
        p_fix,
        stderr: (p_fix * (1.0 - p_fix) / n as f64).sqrt(),
        replicas: n,
        absorbed_fraction: absorbed,
        warning,
    }
}

/// Fixation estimate over a contiguous block of replica indices, so callers
/// can report running estimates without changing the per-replica streams.
pub fn fixation_outcomes(
    p: &ModelParams,
    init: &InitialCondition,
    range: std::ops::Range<u64>,
    eps_absorb: f64,
    t_cap: f64,
    dt: f64,
    stream: SeedStream,
) -> Result<Vec<(f64, bool)>> {
    let x0 = start(p, init, dt)?;
    let base = range.start;
    Ok(map_replicas(range.end - range.start, |i| {
        let mut rng = stream.rng(base + i);
        run_to_absorption(x0, p, eps_absorb, t_cap, dt, &mut rng)
    }))
}

pub fn summarize_outcomes(outcomes: &[(f64, bool)]) -> FixationEstimate {
    summarize_fixation(outcomes)
}

/// Monte Carlo estimate of `∫_0^T E[D(t) (x_1(t) - x_0(t))] dt`, the integrand
/// whose neutral value gives the first-order fixation correction. Paths that
/// have absorbed in `x_h` contribute nothing further.
pub fn ld_selection_integral(
    p: &ModelParams,
    init: &InitialCondition,
    horizon: f64,
    dt: f64,
    replicas: u64,
    stream: SeedStream,
) -> Result<Estimate> {
    let x0 = start(p, init, dt)?;
    let (steps, h) = time_grid(horizon, dt)?;
    let sqdt = h.sqrt();
    let integrand = |x: &[f64; 4]| {
        let m = marginals(&SimplexState(*x));
        m.d * (m.x_1 - m.x_0)
    };
    let per_path = map_replicas(replicas, |i| {
        let mut rng = stream.rng(i);
        let mut x = x0;
        let mut prev = integrand(&x);
        let mut acc = 0.0;
        for _ in 0..steps {
            let xh = x[H0] + x[H1];
            if xh <= 0.0 || xh >= 1.0 {
                break;
            }
            x = limit_step(&x, p, h, sqdt, &mut rng);
            let cur = integrand(&project(x));
            acc += 0.5 * (prev + cur) * h;
            prev = cur;
        }
        acc
    });
    Ok(Estimate::from_samples(&per_path))
}

/// A regression coefficient or ratio with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub value: f64,
    pub se: f64,
}

impl Coefficient {
    pub fn within(&self, target: f64, k: f64) -> bool {
        let d = (self.value - target).abs();
        d == 0.0 || d <= k * self.se
    }
}

/// Consistency of one aggregate coordinate along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCheck {
    /// Slope of realized increments on the predicted drift increments
    /// (expected 1). `NaN` when the predicted drift vanishes identically.
    pub drift_match: Coefficient,
    /// Realized minus predicted drift per unit time (expected 0).
    pub drift_residual_rate: Coefficient,
    /// Realized quadratic variation over the predicted one (expected 1).
    pub qv_ratio: Coefficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub x_h: AggregateCheck,
    pub x_0: AggregateCheck,
    pub steps: usize,
}

/// Drift and variance rate of `x_h`: `σ²/γ D (x_1 - x_0)` and
/// `x_h x_ℓ + 2σ²/γ D²`.
pub fn aggregate_h_coefficients(x: &[f64; 4], p: &ModelParams) -> (f64, f64) {
    let m = marginals(&SimplexState(*x));
    let s = p.s2g();
    (s * m.d * (m.x_1 - m.x_0), m.x_h * m.x_l + 2.0 * s * m.d * m.d)
}

/// Drift and variance rate of `x_0`.
pub fn aggregate_0_coefficients(x: &[f64; 4], p: &ModelParams) -> (f64, f64) {
    let m = marginals(&SimplexState(*x));
    let s = p.s2g();
    let drift = s * m.x_0 * m.x_1 * (m.x_1 - m.x_0)
        + p.theta_l * (p.r - m.x_0)
        + (p.theta_h - p.theta_l) * (p.r * x[H1] - (1.0 - p.r) * x[H0]);
    (drift, m.x_0 * m.x_1 + 2.0 * s * (m.x_0 * m.x_1).powi(2))
}

#[derive(Default)]
struct CheckAccumulator {
    sfy: f64,
    sff: f64,
    resid: f64,
    resid_sq: f64,
    qv: f64,
    qv_pred: f64,
    qv_var: f64,
    time: f64,
    n: usize,
}

impl CheckAccumulator {
    fn push(&mut self, dy: f64, drift: f64, var_rate: f64, dt: f64) {
        let f = drift * dt;
        self.sfy += f * dy;
        self.sff += f * f;
        self.resid += dy - f;
        self.resid_sq += (dy - f) * (dy - f);
        self.qv += dy * dy;
        self.qv_pred += var_rate * dt;
        self.qv_var += 2.0 * (var_rate * dt).powi(2);
        self.time += dt;
        self.n += 1;
    }

    fn finish(&self, increments: &[(f64, f64)]) -> AggregateCheck {
        let beta = if self.sff > 0.0 { self.sfy / self.sff } else { f64::NAN };
        // heteroscedasticity-robust slope error
        let beta_se = if self.sff > 0.0 {
            let s: f64 = increments
                .iter()
                .map(|&(dy, f)| (f * (dy - beta * f)).powi(2))
                .sum();
            s.sqrt() / self.sff
        } else {
            f64::NAN
        };
        AggregateCheck {
            drift_match: Coefficient { value: beta, se: beta_se },
            drift_residual_rate: Coefficient {
                value: self.resid / self.time,
                se: self.resid_sq.sqrt() / self.time,
            },
            qv_ratio: Coefficient {
                value: if self.qv_pred > 0.0 { self.qv / self.qv_pred } else { f64::NAN },
                se: if self.qv_pred > 0.0 { self.qv_var.sqrt() / self.qv_pred } else { f64::NAN },
            },
        }
    }
}

/// Compares per-step increments of `x_h` and `x_0` along limit paths with
/// the aggregate dynamics: drift regression and realized quadratic
/// variation. Several paths may be pooled.
pub fn check_aggregate_consistency_pooled(trajs: &[Trajectory], p: &ModelParams) -> Result<AggregateReport> {
    let steps: usize = trajs.iter().map(|t| t.steps()).sum();
    if steps < 1000 {
        return Err(Error::Input(format!(
            "aggregate consistency needs at least 1000 steps, got {steps}"
        )));
    }
    let mut acc_h = CheckAccumulator::default();
    let mut acc_0 = CheckAccumulator::default();
    let mut inc_h = Vec::with_capacity(steps);
    let mut inc_0 = Vec::with_capacity(steps);
    for traj in trajs {
        traj.validate()?;
        for w in 0..traj.steps() {
            let dt = traj.times[w + 1] - traj.times[w];
            let a = traj.states[w].as_array();
            let b = traj.states[w + 1].as_array();
            let (dh, vh) = aggregate_h_coefficients(a, p);
            let (d0, v0) = aggregate_0_coefficients(a, p);
            let dyh = (b[H0] + b[H1]) - (a[H0] + a[H1]);
            let dy0 = (b[H0] + b[L0]) - (a[H0] + a[L0]);
            acc_h.push(dyh, dh, vh, dt);
            acc_0.push(dy0, d0, v0, dt);
            inc_h.push((dyh, dh * dt));
            inc_0.push((dy0, d0 * dt));
        }
    }
    Ok(AggregateReport {
        x_h: acc_h.finish(&inc_h),
        x_0: acc_0.finish(&inc_0),
        steps,
    })
}

pub fn check_aggregate_consistency(traj: &Trajectory, p: &ModelParams) -> Result<AggregateReport> {
    check_aggregate_consistency_pooled(std::slice::from_ref(traj), p)
}

// Reference form of `limit_step` through the full noise matrix.
#[cfg(test)]
fn step_via_matrix(x: &[f64; 4], p: &ModelParams, dt: f64, dw: &[f64; 7]) -> [f64; 4] {
    let drift = drift_limit_raw(x, p);
    let m = diffusion_limit_raw(x, p);
    let mut y = [0.0; 4];
    for i in 0..4 {
        y[i] = x[i] + drift[i] * dt + (0..7).map(|k| m[i][k] * dw[k]).sum::<f64>();
    }
    settle(y)
}

/// Mean of `f` over replica snapshots at one time index.
pub fn snapshot_mean(snaps: &[Vec<SimplexState>], idx: usize, f: impl Fn(&SimplexState) -> f64) -> Estimate {
    let mut w = Welford::default();
    for s in snaps {
        w.push(f(&s[idx]));
    }
    w.estimate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;

    fn neutral() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn step_matches_matrix_form() {
        let p = ModelParams { sigma: 0.7, gamma: 1.3, theta_l: 0.2, theta_h: 0.9, r: 0.3, n_scale: 1 };
        let x = [0.1, 0.2, 0.3, 0.4];
        let dt = 1e-3;
        let mut rng = rng_from_seed(5);
        let got = limit_step(&x, &p, dt, dt.sqrt(), &mut rng);
        let mut rng = rng_from_seed(5);
        let dw: [f64; 7] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * dt.sqrt());
        let want = step_via_matrix(&x, &p, dt, &dw);
        for i in 0..4 {
            assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn vertex_is_absorbing() {
        let init = InitialCondition::new(1.0, 1.0, 0.0).unwrap();
        let p = ModelParams { sigma: 0.5, theta_l: 0.0, theta_h: 0.0, ..neutral() };
        let traj = simulate_limit(&p, &init, 1.0, 1e-3, 3).unwrap();
        assert!(traj.states.iter().all(|s| s.as_array() == &[0.0, 0.0, 1.0, 0.0]));
        assert!(traj.env.is_none());
    }

    #[test]
    fn guard_rejects_coarse_steps() {
        let init = InitialCondition::new(0.5, 0.5, 0.5).unwrap();
        let p = ModelParams { theta_h: 5.0, ..neutral() };
        let err = simulate_limit(&p, &init, 1.0, 0.05, 1).unwrap_err();
        assert!(matches!(err, Error::StepGuard { .. }));
    }

    #[test]
    fn deterministic_given_seed() {
        let init = InitialCondition::new(0.3, 0.2, 0.7).unwrap();
        let p = ModelParams { sigma: 0.4, theta_l: 0.1, theta_h: 1.0, ..neutral() };
        let a = simulate_limit(&p, &init, 0.5, 1e-3, 99).unwrap();
        let b = simulate_limit(&p, &init, 0.5, 1e-3, 99).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.times.len(), 501);
        assert_abs_diff_eq!(*a.times.last().unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn fixation_at_boundaries() {
        let p = ModelParams { sigma: 0.3, theta_l: 0.2, theta_h: 1.0, ..neutral() };
        let s = SeedStream::new(1, "fix");
        let one = estimate_fixation(&p, &InitialCondition::new(1.0, 0.5, 0.5).unwrap(), 1000, 1e-4, 10.0, 1e-3, s).unwrap();
        assert_eq!(one.p_fix, 1.0);
        assert_eq!(one.stderr, 0.0);
        let zero = estimate_fixation(&p, &InitialCondition::new(0.0, 0.5, 0.5).unwrap(), 1000, 1e-4, 10.0, 1e-3, s).unwrap();
        assert_eq!(zero.p_fix, 0.0);
        assert_eq!(zero.absorbed_fraction, 1.0);
        assert!(zero.warning.is_none());
    }

    #[test]
    fn fixation_input_errors() {
        let p = neutral();
        let init = InitialCondition::new(0.5, 0.5, 0.5).unwrap();
        let s = SeedStream::new(1, "fix");
        assert!(estimate_fixation(&p, &init, 999, 1e-4, 10.0, 1e-3, s).is_err());
        assert!(estimate_fixation(&p, &init, 1000, 0.02, 10.0, 1e-3, s).is_err());
    }

    #[test]
    fn censored_replicas_raise_warning() {
        let outcomes: Vec<(f64, bool)> = (0..100).map(|i| if i < 5 { (0.4, false) } else { (1.0, true) }).collect();
        let est = summarize_fixation(&outcomes);
        assert!(est.warning.is_some());
        assert_abs_diff_eq!(est.absorbed_fraction, 0.95);
    }

    #[test]
    fn aggregate_check_needs_long_path() {
        let init = InitialCondition::new(0.5, 0.5, 0.5).unwrap();
        let traj = simulate_limit(&neutral(), &init, 0.5, 1e-3, 1).unwrap();
        assert!(check_aggregate_consistency(&traj, &neutral()).is_err());
    }
}
