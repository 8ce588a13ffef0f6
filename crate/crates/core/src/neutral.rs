//! Neutral (`σ = 0`) moments: closed forms for the time integrals that make
//! up the fixation correction, and a Kingman-coalescent Monte Carlo oracle.

use crate::error::{Error, Result};
use crate::model::{InitialCondition, Modifier, ModelParams};
use crate::par::map_replicas;
use crate::rng::{SeedStream, SimRng};
use crate::stats::{simpson_estimates, Estimate};
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

/// Constraint on the B-locus type of one sampled individual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BTarget {
    Zero,
    One,
    Any,
}

impl BTarget {
    fn admits(self, b: u8) -> bool {
        match self {
            BTarget::Zero => b == 0,
            BTarget::One => b == 1,
            BTarget::Any => true,
        }
    }
}

/// A mixed moment `E[Π X_{a_i b_i}(t)]` of order one to three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub targets: Vec<(Modifier, BTarget)>,
    pub time: f64,
}

impl MomentSpec {
    pub fn new(targets: Vec<(Modifier, BTarget)>, time: f64) -> Result<Self> {
        let s = Self { targets, time };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() || self.targets.len() > 3 {
            return Err(Error::Input(format!(
                "a moment needs 1 to 3 factors, got {}",
                self.targets.len()
            )));
        }
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(Error::Domain { name: "time", value: self.time, range: "[0, inf)" });
        }
        Ok(())
    }
}

fn share_of_zero(init: &InitialCondition, a: Modifier) -> f64 {
    match a {
        Modifier::High => init.p,
        Modifier::Low => init.q,
    }
}

fn weight_of(init: &InitialCondition, a: Modifier) -> f64 {
    match a {
        Modifier::High => init.x,
        Modifier::Low => 1.0 - init.x,
    }
}

/// `E[X_{ab}(t)]` under neutrality.
pub fn first_moment(a: Modifier, b: BTarget, t: f64, init: &InitialCondition, p: &ModelParams) -> f64 {
    let w = weight_of(init, a);
    let start = share_of_zero(init, a);
    let zero = w * (p.r + (-p.theta_of(a) * t).exp() * (start - p.r));
    match b {
        BTarget::Any => w,
        BTarget::Zero => zero,
        BTarget::One => w - zero,
    }
}

/// `∫_0^∞ E[X_ℓ X_h0 - X_h X_ℓ0] dt`.
pub fn integral_i1(init: &InitialCondition, p: &ModelParams) -> f64 {
    let InitialCondition { x, p: ph, q } = *init;
    let r = p.r;
    x * (1.0 - x) * ((ph - r) / (1.0 + p.theta_h) - (q - r) / (1.0 + p.theta_l))
}

/// `∫_0^∞ E[X_h X_h0 X_ℓ0 - X_ℓ X_h0 X_ℓ0] dt`.
pub fn integral_i2(init: &InitialCondition, p: &ModelParams) -> f64 {
    let InitialCondition { x, p: ph, q } = *init;
    let (r, tl, th) = (p.r, p.theta_l, p.theta_h);
    x * (1.0 - x)
        * (2.0 * x - 1.0)
        * (r * r / 3.0 + r * (ph - r) / (3.0 + th) + r * (q - r) / (3.0 + tl) + (ph - r) * (q - r) / (3.0 + th + tl))
}

/// Part of the third integral where the three lineages do not coalesce.
fn i3_separate(init: &InitialCondition, p: &ModelParams) -> f64 {
    let InitialCondition { x, p: ph, q } = *init;
    let (r, tl, th) = (p.r, p.theta_l, p.theta_h);
    let dq = q - r;
    let dp = ph - r;
    x * (1.0 - x)
        * ((1.0 - 2.0 * x) * r * r / 3.0
            + (1.0 - x) * (2.0 * r * dq / (3.0 + tl) + dq * dq / (3.0 + 2.0 * tl))
            - x * (2.0 * r * dp / (3.0 + th) + dp * dp / (3.0 + 2.0 * th)))
}

/// Coalescence of the two like lineages with no mutation on either branch.
fn i3_merged(init: &InitialCondition, p: &ModelParams) -> f64 {
    let (tl, th) = (p.theta_l, p.theta_h);
    (p.r * tl + init.q) / ((3.0 + 2.0 * tl) * (1.0 + tl)) - (p.r * th + init.p) / ((3.0 + 2.0 * th) * (1.0 + th))
}

/// Coalescence followed by a mutation on exactly one branch.
fn i3_one_branch(init: &InitialCondition, p: &ModelParams) -> f64 {
    let (r, tl, th) = (p.r, p.theta_l, p.theta_h);
    2.0 * tl * (init.q - r) / ((1.0 + tl) * (3.0 + tl) * (3.0 + 2.0 * tl))
        - 2.0 * th * (init.p - r) / ((1.0 + th) * (3.0 + th) * (3.0 + 2.0 * th))
        + r / (3.0 + 2.0 * th)
        - r / (3.0 + 2.0 * tl)
}

/// `∫_0^∞ E[X_h X_ℓ0² - X_ℓ X_h0²] dt`.
pub fn integral_i3(init: &InitialCondition, p: &ModelParams) -> f64 {
    let xx = init.x * (1.0 - init.x);
    i3_separate(init, p) + xx * i3_merged(init, p) + xx * p.r * i3_one_branch(init, p)
}

/// `∫_0^∞ E[D (X_1 - X_0)] dt = I1 + 2 I2 + 2 I3`.
pub fn total_integral(init: &InitialCondition, p: &ModelParams) -> f64 {
    integral_i1(init, p) + 2.0 * integral_i2(init, p) + 2.0 * integral_i3(init, p)
}

#[derive(Clone, Copy)]
struct Node {
    a: Modifier,
    time: f64,
    parent: usize,
}

const ROOT: usize = usize::MAX;

/// One draw of the coalescent estimator: the genealogy of the sample is
/// traced back to `t` and mutations are dropped on its branches; the
/// ancestral types are then weighted by their initial frequencies.
fn oracle_draw(targets: &[(Modifier, BTarget)], t: f64, init: &InitialCondition, p: &ModelParams, rng: &mut SimRng) -> f64 {
    let n = targets.len();
    let mut nodes = [Node { a: Modifier::Low, time: 0.0, parent: ROOT }; 5];
    let mut active = [0usize; 3];
    for (i, &(a, _)) in targets.iter().enumerate() {
        nodes[i].a = a;
        active[i] = i;
    }
    let mut count = n;
    let mut k = n;
    let mut now = 0.0;
    while k >= 2 {
        let rate = (k * (k - 1)) as f64 / 2.0;
        now += rng.sample::<f64, _>(Exp1) / rate;
        if now >= t {
            break;
        }
        let i = rng.random_range(0..k);
        let mut j = rng.random_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let (u, v) = (active[i], active[j]);
        if nodes[u].a != nodes[v].a {
            return 0.0;
        }
        nodes[count] = Node { a: nodes[u].a, time: now, parent: ROOT };
        nodes[u].parent = count;
        nodes[v].parent = count;
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        active[lo] = count;
        active[hi] = active[k - 1];
        k -= 1;
        count += 1;
    }

    let mut weight = 1.0;
    for &u in &active[..k] {
        weight *= weight_of(init, nodes[u].a);
    }
    if weight == 0.0 {
        return 0.0;
    }

    // Each node's B-type is either fixed by the latest mutation above it or
    // inherited from its root ancestor, whose type is then summed out.
    let mut origin = [Origin::Root(0); 5];
    for u in (0..count).rev() {
        let node = nodes[u];
        let (inherited, top) = if node.parent == ROOT {
            (Origin::Root(u), t)
        } else {
            (origin[node.parent], nodes[node.parent].time)
        };
        let theta = p.theta_of(node.a);
        let mutated = theta > 0.0 && rng.random::<f64>() < -(-theta * (top - node.time)).exp_m1();
        origin[u] = if mutated {
            Origin::Fixed(if rng.random::<f64>() < p.r { 0 } else { 1 })
        } else {
            inherited
        };
    }
    // admissible root types per root, as a bit mask over {0, 1}
    let mut allowed = [0b11u8; 5];
    for (i, &(_, b)) in targets.iter().enumerate() {
        match origin[i] {
            Origin::Fixed(v) => {
                if !b.admits(v) {
                    return 0.0;
                }
            }
            Origin::Root(root) => {
                allowed[root] &= (b.admits(0) as u8) | ((b.admits(1) as u8) << 1);
            }
        }
    }
    for &u in &active[..k] {
        let zero = share_of_zero(init, nodes[u].a);
        let m = allowed[u];
        weight *= (m & 1) as f64 * zero + ((m >> 1) & 1) as f64 * (1.0 - zero);
    }
    weight
}

#[derive(Clone, Copy)]
enum Origin {
    Root(usize),
    Fixed(u8),
}

/// Monte Carlo estimate of a neutral moment from the sample genealogy.
pub fn coalescent_oracle(
    spec: &MomentSpec,
    init: &InitialCondition,
    p: &ModelParams,
    replicas: u64,
    stream: SeedStream,
) -> Result<Estimate> {
    spec.validate()?;
    init.validate()?;
    if replicas < 1000 {
        return Err(Error::Input(format!("coalescent oracle needs >= 1000 replicas, got {replicas}")));
    }
    let draws = map_replicas(replicas, |i| {
        let mut rng = stream.rng(i);
        oracle_draw(&spec.targets, spec.time, init, p, &mut rng)
    });
    Ok(Estimate::from_samples(&draws))
}

/// One of the three integrals assembled from the corresponding moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeutralIntegral {
    I1,
    I2,
    I3,
}

impl NeutralIntegral {
    pub const ALL: [NeutralIntegral; 3] = [NeutralIntegral::I1, NeutralIntegral::I2, NeutralIntegral::I3];

    /// Signed moment terms of the integrand.
    pub fn terms(self) -> Vec<(f64, Vec<(Modifier, BTarget)>)> {
        use BTarget::*;
        use Modifier::*;
        match self {
            NeutralIntegral::I1 => vec![(1.0, vec![(Low, Any), (High, Zero)]), (-1.0, vec![(High, Any), (Low, Zero)])],
            NeutralIntegral::I2 => vec![
                (1.0, vec![(High, Any), (High, Zero), (Low, Zero)]),
                (-1.0, vec![(Low, Any), (High, Zero), (Low, Zero)]),
            ],
            NeutralIntegral::I3 => vec![
                (1.0, vec![(High, Any), (Low, Zero), (Low, Zero)]),
                (-1.0, vec![(Low, Any), (High, Zero), (High, Zero)]),
            ],
        }
    }

    pub fn closed_form(self, init: &InitialCondition, p: &ModelParams) -> f64 {
        match self {
            NeutralIntegral::I1 => integral_i1(init, p),
            NeutralIntegral::I2 => integral_i2(init, p),
            NeutralIntegral::I3 => integral_i3(init, p),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NeutralIntegral::I1 => "I1",
            NeutralIntegral::I2 => "I2",
            NeutralIntegral::I3 => "I3",
        }
    }
}

pub const SIMPSON_STEP: f64 = 0.05;
pub const SIMPSON_HORIZON: f64 = 20.0;

/// Simpson integral over `[0, horizon]` of oracle estimates of the integrand.
/// Every time point and term uses its own seed stream.
pub fn oracle_integral(
    which: NeutralIntegral,
    init: &InitialCondition,
    p: &ModelParams,
    replicas: u64,
    step: f64,
    horizon: f64,
    stream: SeedStream,
) -> Result<Estimate> {
    let intervals = (horizon / step).round() as usize;
    if intervals == 0 || intervals % 2 == 1 {
        return Err(Error::Input("Simpson's rule needs an even, positive number of intervals".into()));
    }
    let h = horizon / intervals as f64;
    let terms = which.terms();
    let mut points = Vec::with_capacity(intervals + 1);
    for k in 0..=intervals {
        let t = k as f64 * h;
        let (mut mean, mut var) = (0.0, 0.0);
        let mut n = 0;
        for (j, (c, targets)) in terms.iter().enumerate() {
            let spec = MomentSpec { targets: targets.clone(), time: t };
            let e = coalescent_oracle(&spec, init, p, replicas, stream.child(&format!("{k}/{j}")))?;
            mean += c * e.mean;
            var += c * c * e.se * e.se;
            n = e.n;
        }
        points.push(Estimate { mean, se: var.sqrt(), n });
    }
    Ok(simpson_estimates(&points, h))
}
