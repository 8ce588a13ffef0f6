//! Function-valued dual of the limiting diffusion on the four-type space.
//!
//! A dual state is a table `ξ` over `n` coordinates, each coordinate taking
//! one of the four types. It pairs with a forward state through
//! `H(x, ξ) = Σ ξ(i_1..i_n) x_{i_1} ... x_{i_n}`, and
//! `E_x[H(X_t, ξ)] = E_ξ[H(x, ξ_t)]`.
//!
//! Tables are dense, coordinate `k` occupying bits `2k..2k+2` of the index.
//! Within a coordinate the type index follows the forward model: bit 0 is the
//! B-type and bit 1 the A-type.
//!
//! Selection jumps are thinned: they fire at `κ` times their nominal rate and
//! the increment `ξ' - ξ` is scaled by `1/κ`. The generator, and therefore
//! every moment, is unchanged while the coordinate count grows more slowly.

use crate::error::{Error, Result};
use crate::model::{InitialCondition, ModelParams};
use crate::par::map_replicas;
use crate::rng::{SeedStream, SimRng};
use crate::stats::{Estimate, Welford};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

/// Largest coordinate count a table may reach (`4^12` entries).
pub const N_MAX_LIMIT: usize = 12;
pub const DEFAULT_N_MAX: usize = 12;

/// `½·1{v_k = v_l} − ¼` on B-types.
#[inline]
pub fn chi(v_k: u8, v_l: u8) -> f64 {
    if v_k == v_l {
        0.25
    } else {
        -0.25
    }
}

#[inline]
fn digit(idx: usize, k: usize) -> usize {
    (idx >> (2 * k)) & 3
}

#[inline]
fn set_digit(idx: usize, k: usize, d: usize) -> usize {
    (idx & !(3 << (2 * k))) | (d << (2 * k))
}

#[inline]
fn b_of(d: usize) -> u8 {
    (d & 1) as u8
}

#[inline]
fn a_is_high(d: usize) -> bool {
    d & 2 != 0
}

/// Table over `n` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub n: usize,
    pub xi: Vec<f64>,
}

impl DualState {
    pub fn new(n: usize, xi: Vec<f64>) -> Result<Self> {
        if n > N_MAX_LIMIT {
            return Err(Error::Input(format!("dual tables are capped at {N_MAX_LIMIT} coordinates")));
        }
        if xi.len() != 1 << (2 * n) {
            return Err(Error::Input(format!("a table over {n} coordinates needs {} entries, got {}", 1usize << (2 * n), xi.len())));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("dual table entries must be finite".into()));
        }
        Ok(Self { n, xi })
    }

    /// Indicator of a single type.
    pub fn indicator(type_index: usize) -> Result<Self> {
        if type_index > 3 {
            return Err(Error::Input(format!("type index {type_index} out of range")));
        }
        let mut xi = vec![0.0; 4];
        xi[type_index] = 1.0;
        Self::new(1, xi)
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(n, vec![value; 1 << (2 * n)])
    }

    /// `⟨x^{⊗n}, ξ⟩`.
    pub fn evaluate(&self, x: &[f64; 4]) -> f64 {
        let mut v = self.xi.clone();
        let mut len = v.len();
        while len > 1 {
            let q = len / 4;
            for j in 0..q {
                v[j] = x[0] * v[j] + x[1] * v[j + q] + x[2] * v[j + 2 * q] + x[3] * v[j + 3 * q];
            }
            len = q;
        }
        v[0]
    }

    fn axis_is_constant(&self, k: usize) -> bool {
        let stride = 1 << (2 * k);
        (0..self.xi.len())
            .filter(|&i| digit(i, k) == 0)
            .all(|i| {
                let v = self.xi[i];
                v == self.xi[i + stride] && v == self.xi[i + 2 * stride] && v == self.xi[i + 3 * stride]
            })
    }

    fn drop_axis(&self, k: usize) -> Self {
        let low = (1 << (2 * k)) - 1;
        let xi = (0..self.xi.len() / 4)
            .map(|j| self.xi[(j & low) | ((j & !low) << 2)])
            .collect();
        Self { n: self.n - 1, xi }
    }

    /// Removes coordinates the table does not depend on. Since the forward
    /// state is a probability vector this leaves `H(x, ξ)` unchanged for all
    /// `x`.
    pub fn without_constant_axes(mut self) -> Self {
        let mut k = self.n;
        while k > 0 {
            k -= 1;
            if self.axis_is_constant(k) {
                self = self.drop_axis(k);
            }
        }
        self
    }
}

/// Parameters of the dual process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub sigma_sq_over_gamma: f64,
    pub theta_l: f64,
    pub theta_h: f64,
    pub r: f64,
    /// Common mutation clock; each coordinate then accepts a mutation with
    /// probability `θ_a / theta_max`.
    pub theta_max: f64,
    pub n_max: usize,
    /// Fraction `κ ∈ (0, 1]` of selection jumps that are realized.
    pub thinning: f64,
    pub drop_constant_axes: bool,
}

impl DualConfig {
    pub fn from_params(p: &ModelParams) -> Result<Self> {
        let s = p.s2g();
        let cfg = Self {
            sigma_sq_over_gamma: s,
            theta_l: p.theta_l,
            theta_h: p.theta_h,
            r: p.r,
            theta_max: p.theta_h.max(p.theta_l),
            n_max: DEFAULT_N_MAX,
            thinning: default_thinning(s),
            drop_constant_axes: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.sigma_sq_over_gamma;
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Domain { name: "sigma_sq_over_gamma", value: s, range: "[0, 0.5)" });
        }
        if 2.0 * s >= 1.0 {
            return Err(Error::DualExplosion(2.0 * s));
        }
        for (name, v) in [("theta_l", self.theta_l), ("theta_h", self.theta_h)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain { name, value: v, range: "[0, inf)" });
            }
        }
        if !(self.theta_max.is_finite() && self.theta_max >= self.theta_l.max(self.theta_h)) {
            return Err(Error::Domain { name: "theta_max", value: self.theta_max, range: "[max(theta_l, theta_h), inf)" });
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Domain { name: "r", value: self.r, range: "[0, 1]" });
        }
        if self.n_max == 0 || self.n_max > N_MAX_LIMIT {
            return Err(Error::Domain { name: "n_max", value: self.n_max as f64, range: "[1, 12]" });
        }
        if !(self.thinning > 0.0 && self.thinning <= 1.0) {
            return Err(Error::Domain { name: "thinning", value: self.thinning, range: "(0, 1]" });
        }
        Ok(())
    }

    fn mutation_acceptance(&self, d: usize) -> f64 {
        let theta = if a_is_high(d) { self.theta_h } else { self.theta_l };
        theta / self.theta_max
    }
}

/// `min(1, 1/(16 σ²/γ))`: keeps the realized selection rate at most `1/16`
/// per coordinate pair, which holds the coordinate count well below the cap
/// for `σ²/γ < 1/2`.
pub fn default_thinning(s: f64) -> f64 {
    if s > 0.0 {
        (1.0 / (16.0 * s)).min(1.0)
    } else {
        1.0
    }
}

/// One transition of the dual, by coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualJump {
    /// Coordinates `k` and `l` are identified; `l` disappears.
    Coalesce { k: usize, l: usize },
    /// Mutation clock rings at coordinate `k`.
    Mutate { k: usize },
    /// Selection acting on the pair `(k, l)`; two coordinates are added.
    SelectPair { k: usize, l: usize },
    /// Selection acting on `k` against a new coordinate; two are added.
    SelectSplit { k: usize },
    /// Selection acting on `k` alone; one coordinate is added.
    SelectSelf { k: usize },
}

impl DualJump {
    pub fn growth(&self) -> isize {
        match self {
            DualJump::Coalesce { .. } => -1,
            DualJump::Mutate { .. } => 0,
            DualJump::SelectPair { .. } | DualJump::SelectSplit { .. } => 2,
            DualJump::SelectSelf { .. } => 1,
        }
    }
}

/// Nominal transition rates at `n` coordinates, before thinning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub coalesce: f64,
    pub mutate: f64,
    pub select_pair: f64,
    pub select_split: f64,
    pub select_self: f64,
}

impl Rates {
    pub fn at(n: usize, cfg: &DualConfig) -> Self {
        let nf = n as f64;
        let pairs = nf * (nf - 1.0) / 2.0;
        let s = cfg.sigma_sq_over_gamma;
        Self {
            coalesce: pairs,
            mutate: cfg.theta_max * nf,
            // the selection generator runs over ordered pairs
            select_pair: 2.0 * s * pairs,
            select_split: 2.0 * nf * s * nf,
            select_self: s * nf,
        }
    }

    pub fn total(&self, thinning: f64) -> f64 {
        self.coalesce + self.mutate + thinning * (self.select_pair + self.select_split + self.select_self)
    }
}

fn distinct_pair(n: usize, rng: &mut SimRng) -> (usize, usize) {
    let k = rng.random_range(0..n);
    let mut l = rng.random_range(0..n - 1);
    if l >= k {
        l += 1;
    }
    (k, l)
}

/// Draws the next transition at `n` coordinates, or `None` when every rate
/// vanishes.
pub fn sample_jump(n: usize, cfg: &DualConfig, rng: &mut SimRng) -> Option<DualJump> {
    let rates = Rates::at(n, cfg);
    let kappa = cfg.thinning;
    let total = rates.total(kappa);
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    if u < rates.coalesce {
        let (k, l) = distinct_pair(n, rng);
        return Some(DualJump::Coalesce { k, l });
    }
    u -= rates.coalesce;
    if u < rates.mutate {
        return Some(DualJump::Mutate { k: rng.random_range(0..n) });
    }
    u -= rates.mutate;
    if u < kappa * rates.select_pair {
        let (k, l) = distinct_pair(n, rng);
        return Some(DualJump::SelectPair { k, l });
    }
    u -= kappa * rates.select_pair;
    if u < kappa * rates.select_split {
        return Some(DualJump::SelectSplit { k: rng.random_range(0..n) });
    }
    Some(DualJump::SelectSelf { k: rng.random_range(0..n) })
}

/// Applies a transition to the table. The mutation jump draws its
/// acceptance from `rng`.
pub fn apply_jump(s: &DualState, jump: DualJump, cfg: &DualConfig, rng: &mut SimRng) -> DualState {
    let accept = match jump {
        DualJump::Mutate { .. } => rng.random::<f64>(),
        _ => 0.0,
    };
    apply_jump_with(s, jump, cfg, accept)
}

/// [`apply_jump`] with the mutation acceptance variate `accept ∈ [0, 1)`
/// given explicitly: coordinate `k` of type `(a, b)` is resampled when
/// `accept < θ_a / theta_max`.
pub fn apply_jump_with(s: &DualState, jump: DualJump, cfg: &DualConfig, accept: f64) -> DualState {
    let n = s.n;
    let xi = &s.xi;
    let scale = 1.0 / cfg.thinning;
    let base = |idx: usize| idx & ((1 << (2 * n)) - 1);
    match jump {
        DualJump::Coalesce { k, l } => {
            let low = (1 << (2 * l)) - 1;
            let out = (0..xi.len() / 4)
                .map(|j| {
                    let spread = (j & low) | ((j & !low) << 2);
                    let dk = digit(spread, k);
                    xi[set_digit(spread, l, dk)]
                })
                .collect();
            DualState { n: n - 1, xi: out }
        }
        DualJump::Mutate { k } => {
            let r = cfg.r;
            let out = (0..xi.len())
                .map(|i| {
                    let d = digit(i, k);
                    if accept < cfg.mutation_acceptance(d) {
                        let a = d & 2;
                        r * xi[set_digit(i, k, a)] + (1.0 - r) * xi[set_digit(i, k, a | 1)]
                    } else {
                        xi[i]
                    }
                })
                .collect();
            DualState { n, xi: out }
        }
        DualJump::SelectPair { k, l } => {
            let out = (0..xi.len() << 4)
                .map(|i| {
                    let low = base(i);
                    let t = xi[low];
                    let f = xi[set_digit(set_digit(low, k, digit(i, n)), l, digit(i, n + 1))];
                    let c = chi(b_of(digit(i, k)), b_of(digit(i, l)));
                    t + (1.0 - c) * scale * (f - t)
                })
                .collect();
            DualState { n: n + 2, xi: out }
        }
        DualJump::SelectSplit { k } => {
            let out = (0..xi.len() << 4)
                .map(|i| {
                    let low = base(i);
                    let t = xi[low];
                    let f = xi[set_digit(low, k, digit(i, n))];
                    let c = chi(b_of(digit(i, k)), b_of(digit(i, n + 1)));
                    t + c * scale * (f - t)
                })
                .collect();
            DualState { n: n + 2, xi: out }
        }
        DualJump::SelectSelf { k } => {
            let out = (0..xi.len() << 2)
                .map(|i| {
                    let low = base(i);
                    let t = xi[low];
                    let f = xi[set_digit(low, k, digit(i, n))];
                    t + 0.75 * scale * (f - t)
                })
                .collect();
            DualState { n: n + 1, xi: out }
        }
    }
}

/// Result of one [`dual_step`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Jumped(DualJump, DualState),
    /// The jump would exceed `n_max`; the table is left as it was.
    Truncated(DualJump),
    /// No transition can fire.
    Frozen,
}

/// Samples and applies the next transition.
pub fn dual_step(s: &DualState, cfg: &DualConfig, rng: &mut SimRng) -> StepOutcome {
    let Some(jump) = sample_jump(s.n, cfg, rng) else {
        return StepOutcome::Frozen;
    };
    if s.n as isize + jump.growth() > cfg.n_max as isize {
        return StepOutcome::Truncated(jump);
    }
    let next = apply_jump(s, jump, cfg, rng);
    let next = if cfg.drop_constant_axes { next.without_constant_axes() } else { next };
    StepOutcome::Jumped(jump, next)
}

/// Runs the dual from `phi` for time `t`. Returns the table at the end, or
/// at the moment the coordinate cap stopped the run, with a truncation flag
/// and the largest coordinate count visited.
pub fn dual_run(phi: &DualState, t: f64, cfg: &DualConfig, rng: &mut SimRng) -> (DualState, bool, usize) {
    let mut s = if cfg.drop_constant_axes { phi.clone().without_constant_axes() } else { phi.clone() };
    let mut peak = s.n;
    let mut now = 0.0;
    loop {
        let total = Rates::at(s.n, cfg).total(cfg.thinning);
        if total <= 0.0 {
            break;
        }
        now += rng.sample::<f64, _>(Exp1) / total;
        if now > t {
            break;
        }
        match dual_step(&s, cfg, rng) {
            StepOutcome::Jumped(_, next) => {
                s = next;
                peak = peak.max(s.n);
            }
            StepOutcome::Truncated(_) => return (s, true, peak),
            StepOutcome::Frozen => break,
        }
    }
    (s, false, peak)
}

/// One replica: the value `H(x0, ξ_t)`, or `None` when the coordinate cap
/// was hit. Also returns the largest coordinate count visited.
pub fn dual_replica(phi: &DualState, t: f64, x0: &[f64; 4], cfg: &DualConfig, rng: &mut SimRng) -> (Option<f64>, usize) {
    let (s, truncated, peak) = dual_run(phi, t, cfg, rng);
    ((!truncated).then(|| s.evaluate(x0)), peak)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEstimate {
    /// Mean over the replicas that stayed below the cap.
    pub estimate: Estimate,
    pub replicas: u64,
    pub truncated: u64,
    pub peak_n: usize,
    /// Set when any replica was truncated; the estimate is then biased.
    pub flagged: bool,
}

/// Per-replica values of the dual estimator, `None` for truncated replicas.
pub fn dual_samples(
    phi: &DualState,
    t: f64,
    init: &InitialCondition,
    cfg: &DualConfig,
    replicas: u64,
    stream: SeedStream,
) -> Result<(Vec<Option<f64>>, usize)> {
    cfg.validate()?;
    if phi.n > cfg.n_max {
        return Err(Error::Input(format!("phi has {} coordinates, above n_max = {}", phi.n, cfg.n_max)));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain { name: "t", value: t, range: "[0, inf)" });
    }
    let x0 = *init.to_state()?.as_array();
    let runs = map_replicas(replicas, |i| {
        let mut rng = stream.rng(i);
        dual_replica(phi, t, &x0, cfg, &mut rng)
    });
    let peak = runs.iter().map(|r| r.1).max().unwrap_or(phi.n);
    Ok((runs.into_iter().map(|r| r.0).collect(), peak))
}

/// `E[H(X_t, φ)]` for the forward process started from `init`, estimated
/// through the dual.
pub fn moment_via_duality(
    phi: &DualState,
    t: f64,
    init: &InitialCondition,
    cfg: &DualConfig,
    replicas: u64,
    stream: SeedStream,
) -> Result<DualEstimate> {
    if replicas < 1000 {
        return Err(Error::Input(format!("duality estimate needs >= 1000 replicas, got {replicas}")));
    }
    let (values, peak_n) = dual_samples(phi, t, init, cfg, replicas, stream)?;
    let mut acc = Welford::default();
    let mut truncated = 0;
    for v in &values {
        match v {
            Some(v) => acc.push(*v),
            None => truncated += 1,
        }
    }
    Ok(DualEstimate {
        estimate: acc.estimate(),
        replicas,
        truncated,
        peak_n,
        flagged: truncated > 0,
    })
}

/// Time-averaged coordinate count over consecutive windows of one long run of
/// the coordinate process, which evolves independently of the table.
pub fn coordinate_count_windows(n0: usize, cfg: &DualConfig, window: f64, windows: usize, rng: &mut SimRng) -> Vec<f64> {
    let mut n = n0;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(windows);
    let mut acc = 0.0;
    let mut edge = window;
    while out.len() < windows {
        let total = Rates::at(n, cfg).total(cfg.thinning);
        let hold = if total > 0.0 { rng.sample::<f64, _>(Exp1) / total } else { f64::INFINITY };
        let until = now + hold;
        while until >= edge && out.len() < windows {
            acc += (edge - now) * n as f64;
            out.push(acc / window);
            acc = 0.0;
            now = edge;
            edge += window;
        }
        if out.len() == windows {
            break;
        }
        acc += (until - now) * n as f64;
        now = until;
        if let Some(jump) = sample_jump(n, cfg, rng) {
            n = (n as isize + jump.growth()) as usize;
        }
    }
    out
}
