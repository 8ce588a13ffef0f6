//! The pre-limit system: selection of strength `σN` whose sign follows a
//! telegraph process switching at rate `N²γ/2`.

use crate::error::{Error, Result};
use crate::limit::{default_dt as limit_default_dt, limit_snapshots};
use crate::model::{
    drift_prelimit_raw, project, resampling_coefficients, settle, InitialCondition, ModelParams, SimplexState,
    H0, H1, L0, PAIRS,
};
use crate::par::map_replicas;
use crate::rng::{rng_from_seed, SeedStream, SimRng};
use crate::stats::{joint_se, variance_estimate, Estimate};
use crate::trajectory::{time_grid, Trajectory};
use rand::Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

/// Largest admissible value of `dt (σN + θ_h + 1)`.
pub const STEP_GUARD: f64 = 0.1;

/// Two-state `±1` environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelegraphEnv {
    pub sign: i8,
    /// Rate of leaving the current state.
    pub switch_rate: f64,
}

impl TelegraphEnv {
    pub fn new(sign: i8, switch_rate: f64) -> Result<Self> {
        if sign != 1 && sign != -1 {
            return Err(Error::Input(format!("environment sign must be +1 or -1, got {sign}")));
        }
        if !(switch_rate.is_finite() && switch_rate >= 0.0) {
            return Err(Error::Domain {
                name: "switch_rate",
                value: switch_rate,
                range: "[0, inf)",
            });
        }
        Ok(Self { sign, switch_rate })
    }

    /// The environment of the pre-limit system, `N²γ/2`.
    pub fn for_params(p: &ModelParams, sign: i8) -> Result<Self> {
        let n = p.n_scale as f64;
        Self::new(sign, n * n * p.gamma / 2.0)
    }

    pub fn z(&self) -> f64 {
        self.sign as f64
    }
}

/// Exponential holding time, or `inf` when the environment is frozen.
fn holding_time(rate: f64, rng: &mut SimRng) -> f64 {
    if rate > 0.0 {
        rng.sample(Exp::new(rate).expect("positive rate"))
    } else {
        f64::INFINITY
    }
}

/// Advances the environment by `dt` and returns it together with the number
/// of switches that occurred.
pub fn step_env_counted(env: TelegraphEnv, dt: f64, rng: &mut SimRng) -> (TelegraphEnv, u32) {
    let mut t = holding_time(env.switch_rate, rng);
    let mut flips = 0;
    while t < dt {
        flips += 1;
        t += holding_time(env.switch_rate, rng);
    }
    let sign = if flips % 2 == 1 { -env.sign } else { env.sign };
    (TelegraphEnv { sign, ..env }, flips)
}

pub fn step_env(env: TelegraphEnv, dt: f64, rng: &mut SimRng) -> TelegraphEnv {
    step_env_counted(env, dt, rng).0
}

pub fn check_step(p: &ModelParams, dt: f64) -> Result<()> {
    let value = dt * (p.sigma * p.n_scale as f64 + p.theta_h + 1.0);
    if value < STEP_GUARD {
        Ok(())
    } else {
        Err(Error::StepGuard {
            product: "dt*(sigma*N + theta_h + 1)",
            value,
        })
    }
}

pub fn default_dt(p: &ModelParams) -> f64 {
    1e-3_f64.min(0.01 / (p.sigma * p.n_scale as f64 + p.theta_h + 1.0))
}

#[inline]
fn euler(x: &[f64; 4], z: f64, p: &ModelParams, h: f64, rng: &mut SimRng) -> [f64; 4] {
    let drift = drift_prelimit_raw(x, z, p);
    let c = resampling_coefficients(x);
    let sq = h.sqrt();
    let mut y = [0.0; 4];
    for i in 0..4 {
        y[i] = x[i] + drift[i] * h;
    }
    for (k, &(a, b)) in PAIRS.iter().enumerate() {
        let w: f64 = rng.sample(StandardNormal);
        let inc = c[k] * w * sq;
        y[a] += inc;
        y[b] -= inc;
    }
    settle(y)
}

/// One step of length `dt`, split at the environment switches that fall
/// inside it.
#[inline]
fn prelimit_step(x: &[f64; 4], env: &mut TelegraphEnv, p: &ModelParams, dt: f64, rng: &mut SimRng) -> [f64; 4] {
    let mut x = *x;
    let mut left = dt;
    loop {
        let hold = holding_time(env.switch_rate, rng);
        if hold >= left {
            return euler(&x, env.z(), p, left, rng);
        }
        x = euler(&x, env.z(), p, hold, rng);
        env.sign = -env.sign;
        left -= hold;
    }
}

fn start(p: &ModelParams, init: &InitialCondition, dt: f64) -> Result<[f64; 4]> {
    p.validate()?;
    check_step(p, dt)?;
    Ok(*init.to_state()?.as_array())
}

fn initial_env(p: &ModelParams, rng: &mut SimRng) -> TelegraphEnv {
    let sign = if rng.random::<bool>() { 1 } else { -1 };
    TelegraphEnv::for_params(p, sign).expect("validated parameters")
}

/// Simulates one pre-limit path. The initial environment sign is drawn from
/// its stationary law.
pub fn simulate_prelimit(
    p: &ModelParams,
    init: &InitialCondition,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut x = start(p, init, dt)?;
    let (steps, h) = time_grid(horizon, dt)?;
    let mut rng = rng_from_seed(seed);
    let mut env = initial_env(p, &mut rng);
    let mut traj = Trajectory::with_capacity(steps + 1, seed, true);
    traj.push(0.0, x, Some(env.sign));
    for k in 1..=steps {
        x = prelimit_step(&x, &mut env, p, h, &mut rng);
        traj.push(k as f64 * h, project(x), Some(env.sign));
    }
    Ok(traj)
}

/// Terminal states of independent pre-limit replicas.
pub fn prelimit_terminal(
    p: &ModelParams,
    init: &InitialCondition,
    horizon: f64,
    dt: f64,
    replicas: u64,
    stream: SeedStream,
) -> Result<Vec<SimplexState>> {
    let x0 = start(p, init, dt)?;
    let (steps, h) = time_grid(horizon, dt)?;
    Ok(map_replicas(replicas, |i| {
        let mut rng = stream.rng(i);
        let mut env = initial_env(p, &mut rng);
        let mut x = x0;
        for _ in 0..steps {
            x = prelimit_step(&x, &mut env, p, h, &mut rng);
        }
        SimplexState(project(x))
    }))
}

/// Mean and variance of `x_h` and `x_0` over a sample of states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean_xh: Estimate,
    pub var_xh: Estimate,
    pub mean_x0: Estimate,
    pub var_x0: Estimate,
}

impl MomentSummary {
    pub fn of(states: &[SimplexState]) -> Self {
        let xh: Vec<f64> = states.iter().map(|s| s.0[H0] + s.0[H1]).collect();
        let x0: Vec<f64> = states.iter().map(|s| s.0[H0] + s.0[L0]).collect();
        Self {
            mean_xh: Estimate::from_samples(&xh),
            var_xh: variance_estimate(&xh),
            mean_x0: Estimate::from_samples(&x0),
            var_x0: variance_estimate(&x0),
        }
    }
}

/// `|a - b|` with the joint standard error of the two estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub value: f64,
    pub se: f64,
}

impl Discrepancy {
    pub fn between(a: &Estimate, b: &Estimate) -> Self {
        Self {
            value: (a.mean - b.mean).abs(),
            se: joint_se(a.se, b.se),
        }
    }

    pub fn within(&self, k: f64) -> bool {
        self.value <= k * self.se
    }

    /// Whether `next` is no larger than `self` up to `k` joint standard errors.
    pub fn not_above(&self, next: &Discrepancy, k: f64) -> bool {
        next.value - self.value <= k * joint_se(self.se, next.se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: u32,
    pub dt: f64,
    pub moments: MomentSummary,
    pub delta_mean_xh: Discrepancy,
    pub delta_var_xh: Discrepancy,
    pub delta_mean_x0: Discrepancy,
    pub delta_var_x0: Discrepancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub horizon: f64,
    pub replicas: u64,
    pub limit_dt: f64,
    pub reference: MomentSummary,
    pub rows: Vec<ConvergenceRow>,
    /// Δ of the `x_h` mean and variance is non-increasing in `N` up to
    /// three joint standard errors between consecutive rows.
    pub monotone: bool,
    /// Every Δ of the largest `N` lies within three joint standard errors.
    pub endpoint_agrees: bool,
    pub warning: Option<String>,
}

/// Compares pre-limit moments at `horizon` with a limit-diffusion reference
/// for each `N` in `n_values`. Each `N` runs at its own default step.
pub fn convergence_study(
    p: &ModelParams,
    init: &InitialCondition,
    horizon: f64,
    n_values: &[u32],
    replicas: u64,
    stream: SeedStream,
) -> Result<ConvergenceStudy> {
    p.validate()?;
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::Input("n_values must be non-empty and all >= 1".into()));
    }
    if replicas < 100 {
        return Err(Error::Input(format!("convergence study needs >= 100 replicas, got {replicas}")));
    }
    let limit_dt = limit_default_dt(p);
    let (steps, h) = time_grid(horizon, limit_dt)?;
    let snaps = limit_snapshots(p, init, &[steps as f64 * h], h, replicas, stream.child("limit"))?;
    let terminal: Vec<SimplexState> = snaps.into_iter().map(|v| v[0]).collect();
    let reference = MomentSummary::of(&terminal);

    let mut rows = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let pn = ModelParams { n_scale: n, ..*p };
        let dt = default_dt(&pn);
        let states = prelimit_terminal(&pn, init, horizon, dt, replicas, stream.child(&format!("N={n}")))?;
        let m = MomentSummary::of(&states);
        rows.push(ConvergenceRow {
            n,
            dt,
            delta_mean_xh: Discrepancy::between(&m.mean_xh, &reference.mean_xh),
            delta_var_xh: Discrepancy::between(&m.var_xh, &reference.var_xh),
            delta_mean_x0: Discrepancy::between(&m.mean_x0, &reference.mean_x0),
            delta_var_x0: Discrepancy::between(&m.var_x0, &reference.var_x0),
            moments: m,
        });
    }
    rows.sort_by_key(|r| r.n);
    let monotone = rows.windows(2).all(|w| {
        w[0].delta_mean_xh.not_above(&w[1].delta_mean_xh, 3.0) && w[0].delta_var_xh.not_above(&w[1].delta_var_xh, 3.0)
    });
    let last = rows.last().expect("non-empty");
    let endpoint_agrees = [last.delta_mean_xh, last.delta_var_xh, last.delta_mean_x0, last.delta_var_x0]
        .iter()
        .all(|d| d.within(3.0));
    let warning = (!p.non_explosive()).then(|| {
        format!("2*sigma^2/gamma = {} >= 1; the dual process is not available for these parameters", 2.0 * p.s2g())
    });
    Ok(ConvergenceStudy {
        horizon,
        replicas,
        limit_dt: h,
        reference,
        rows,
        monotone,
        endpoint_agrees,
        warning,
    })
}
