//! One runner per experiment. Each returns a result table, the warnings it
//! raised and free-form details for the summary sidecar.

use crate::config::{Experiment, RunConfig};
use crate::output::{Cell, Table};
use fluctsel_core::dual::{moment_via_duality, DualConfig, DualState};
use fluctsel_core::fixation::{
    approx_fixation, correction_cor1, correction_t3, random_inputs, symmetry_battery, CorrectionInput, SYMMETRY_TOL,
};
use fluctsel_core::limit::{fixation_outcomes, simulate_limit, summarize_outcomes};
use fluctsel_core::model::marginals;
use fluctsel_core::neutral::{first_moment, oracle_integral, total_integral, BTarget, NeutralIntegral, SIMPSON_HORIZON, SIMPSON_STEP};
use fluctsel_core::prelimit::{convergence_study, MomentSummary, simulate_prelimit};
use fluctsel_core::{Estimate, Modifier, ModelParams, SeedStream, Trajectory};
use serde_json::{json, Value};

/// Tolerance of the two formula identities checked by `verify`.
pub const IDENTITY_TOL: f64 = 1e-12;

pub struct Outcome {
    pub table: Table,
    pub warnings: Vec<String>,
    pub details: Value,
}

pub fn run(cfg: &RunConfig) -> fluctsel_core::Result<Outcome> {
    let stream = SeedStream::new(cfg.run.seed, cfg.run.experiment.name());
    match cfg.run.experiment {
        Experiment::SimulateLimit => {
            let n = &cfg.numerics;
            let traj = simulate_limit(&cfg.model, &cfg.init.condition(), n.horizon, n.dt, stream.replica_seed(0))?;
            Ok(trajectory_outcome(&traj))
        }
        Experiment::SimulatePrelimit => {
            let n = &cfg.numerics;
            let traj = simulate_prelimit(&cfg.model, &cfg.init.condition(), n.horizon, n.dt, stream.replica_seed(0))?;
            Ok(trajectory_outcome(&traj))
        }
        Experiment::Fixation => fixation(cfg, stream),
        Experiment::Convergence => convergence(cfg, stream),
        Experiment::Verify => verify(cfg, stream),
        Experiment::Moments => moments(cfg, stream),
        Experiment::Dual => dual(cfg, stream),
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 9] = ["t", "x_l0", "x_l1", "x_h0", "x_h1", "x_h", "x_0", "D", "env"];

fn trajectory_outcome(traj: &Trajectory) -> Outcome {
    let mut table = Table::new(&TRAJECTORY_COLUMNS);
    for (k, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        let m = marginals(s);
        let env = match &traj.env {
            Some(e) => e[k].into(),
            None => Cell::Empty,
        };
        let [l0, l1, h0, h1] = *s.as_array();
        table.push(vec![(*t).into(), l0.into(), l1.into(), h0.into(), h1.into(), m.x_h.into(), m.x_0.into(), m.d.into(), env]);
    }
    Outcome { table, warnings: Vec::new(), details: json!({ "steps": traj.steps(), "replica_seed": traj.seed }) }
}

fn correction_input(cfg: &RunConfig) -> fluctsel_core::Result<CorrectionInput> {
    let (i, m) = (&cfg.init, &cfg.model);
    CorrectionInput::new(i.x, i.p, i.q, m.r, m.theta_l, m.theta_h)
}

fn fixation(cfg: &RunConfig, stream: SeedStream) -> fluctsel_core::Result<Outcome> {
    let (m, n) = (&cfg.model, &cfg.numerics);
    let init = cfg.init.condition();
    let c = correction_input(cfg)?;
    let approx = approx_fixation(&c, m.sigma, m.gamma);
    let corr = correction_t3(&c);

    let mut table = Table::new(&[
        "batch",
        "replicas",
        "batch_p_fix",
        "running_p_fix",
        "running_se",
        "absorbed_fraction",
        "approx_fixation",
        "correction_t3",
    ]);
    let batches = cfg.fixation.batches;
    let mut all = Vec::with_capacity(n.replicas as usize);
    for b in 0..batches {
        let range = (b * n.replicas / batches)..((b + 1) * n.replicas / batches);
        let outcomes = fixation_outcomes(m, &init, range, n.eps_absorb, n.t_cap, n.dt, stream)?;
        let batch = summarize_outcomes(&outcomes);
        all.extend(outcomes);
        let running = summarize_outcomes(&all);
        table.push(vec![
            (b + 1).into(),
            running.replicas.into(),
            batch.p_fix.into(),
            running.p_fix.into(),
            running.stderr.into(),
            running.absorbed_fraction.into(),
            approx.into(),
            corr.into(),
        ]);
    }
    let fin = summarize_outcomes(&all);
    let mut warnings: Vec<String> = fin.warning.iter().cloned().collect();
    if m.s2g() > 0.1 {
        warnings.push(format!("sigma^2/gamma = {} is not small; the first-order approximation may be poor", m.s2g()));
    }
    let details = json!({
        "p_fix": fin.p_fix,
        "stderr": fin.stderr,
        "absorbed_fraction": fin.absorbed_fraction,
        "approx_fixation": approx,
        "correction_t3": corr,
        "z_vs_approx": Estimate { mean: fin.p_fix, se: fin.stderr, n: fin.replicas }.z_to(approx),
    });
    Ok(Outcome { table, warnings, details })
}

fn convergence(cfg: &RunConfig, stream: SeedStream) -> fluctsel_core::Result<Outcome> {
    let n = &cfg.numerics;
    let study = convergence_study(&cfg.model, &cfg.init.condition(), n.horizon, &cfg.convergence.n_values, n.replicas, stream)?;
    let mut table = Table::new(&[
        "process",
        "n",
        "dt",
        "mean_xh",
        "se_mean_xh",
        "var_xh",
        "se_var_xh",
        "mean_x0",
        "se_mean_x0",
        "var_x0",
        "se_var_x0",
        "delta_mean_xh",
        "se_delta_mean_xh",
        "delta_var_xh",
        "se_delta_var_xh",
        "delta_mean_x0",
        "se_delta_mean_x0",
        "delta_var_x0",
        "se_delta_var_x0",
    ]);
    let moments = |m: &MomentSummary| -> Vec<Cell> {
        [m.mean_xh, m.var_xh, m.mean_x0, m.var_x0].iter().flat_map(|e| [Cell::Num(e.mean), Cell::Num(e.se)]).collect()
    };
    let mut row = vec!["limit".into(), Cell::Empty, study.limit_dt.into()];
    row.extend(moments(&study.reference));
    row.extend(std::iter::repeat_n(Cell::Empty, 8));
    table.push(row);
    for r in &study.rows {
        let mut row = vec!["prelimit".into(), u64::from(r.n).into(), r.dt.into()];
        row.extend(moments(&r.moments));
        for d in [r.delta_mean_xh, r.delta_var_xh, r.delta_mean_x0, r.delta_var_x0] {
            row.extend([Cell::Num(d.value), Cell::Num(d.se)]);
        }
        table.push(row);
    }
    let mut warnings: Vec<String> = study.warning.iter().cloned().collect();
    if !study.monotone {
        warnings.push("discrepancy in the x_h mean or variance grows with N by more than 3 joint standard errors".into());
    }
    if !study.endpoint_agrees {
        warnings.push(format!("largest N = {} still differs from the limit by more than 3 standard errors", study.rows.last().map_or(0, |r| r.n)));
    }
    let details = json!({ "monotone": study.monotone, "endpoint_agrees": study.endpoint_agrees });
    Ok(Outcome { table, warnings, details })
}

fn neutral_params(c: &CorrectionInput) -> ModelParams {
    ModelParams { theta_l: c.theta_l, theta_h: c.theta_h, r: c.r, ..ModelParams::default() }
}

fn verify(cfg: &RunConfig, stream: SeedStream) -> fluctsel_core::Result<Outcome> {
    let v = &cfg.verify;
    let inputs = random_inputs(stream.replica_seed(0), v.identity_draws as usize);
    let mut table = Table::new(&["check", "draws", "passed", "max_deviation", "tolerance"]);
    let mut warnings = Vec::new();
    let mut passes = 0u64;
    let mut total = 0u64;
    let mut record = |name: &str, draws: u64, max: f64, ok: bool, tol: f64, table: &mut Table| {
        total += 1;
        if ok {
            passes += 1;
        } else {
            warnings.push(format!("check failed: {name} (max deviation {max:e})"));
        }
        table.push(vec![name.into(), draws.into(), ok.into(), max.into(), tol.into()]);
    };

    let dev = |f: &dyn Fn(&CorrectionInput) -> f64| inputs.iter().map(f).fold(0.0_f64, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) });
    let cor1 = dev(&|c| (correction_t3(c) - correction_cor1(c)).abs());
    record("correction forms agree", v.identity_draws, cor1, cor1 < IDENTITY_TOL, IDENTITY_TOL, &mut table);
    let sum = dev(&|c| (total_integral(&c.init, &neutral_params(c)) - correction_t3(c)).abs());
    record("integrals sum to correction", v.identity_draws, sum, sum < IDENTITY_TOL, IDENTITY_TOL, &mut table);

    let report = symmetry_battery(stream.replica_seed(1), v.symmetry_draws)?;
    for c in &report.checks {
        record(&c.name, report.draws, c.max_deviation, c.passed, SYMMETRY_TOL, &mut table);
    }
    let details = json!({ "passed": passes, "checks": total, "symmetry": report });
    Ok(Outcome { table, warnings, details })
}

fn moments(cfg: &RunConfig, stream: SeedStream) -> fluctsel_core::Result<Outcome> {
    let init = cfg.init.condition();
    let p = ModelParams { sigma: 0.0, ..cfg.model };
    let mut table = Table::new(&["integral", "closed_form", "oracle_mean", "oracle_se", "z"]);
    let mut parts = Vec::new();
    for which in NeutralIntegral::ALL {
        let want = which.closed_form(&init, &p);
        let est = oracle_integral(which, &init, &p, cfg.numerics.replicas, SIMPSON_STEP, SIMPSON_HORIZON, stream.child(which.name()))?;
        table.push(vec![which.name().into(), want.into(), est.mean.into(), est.se.into(), est.z_to(want).into()]);
        parts.push(est);
    }
    // I1 + 2 I2 + 2 I3 from independent estimates
    let mean = parts[0].mean + 2.0 * parts[1].mean + 2.0 * parts[2].mean;
    let se = (parts[0].se.powi(2) + 4.0 * parts[1].se.powi(2) + 4.0 * parts[2].se.powi(2)).sqrt();
    let combined = Estimate { mean, se, n: cfg.numerics.replicas };
    let want = total_integral(&init, &p);
    table.push(vec!["total".into(), want.into(), mean.into(), se.into(), combined.z_to(want).into()]);

    let mut warnings = Vec::new();
    if cfg.model.sigma != 0.0 {
        warnings.push("moments are neutral quantities; sigma was ignored".into());
    }
    for row in &table.rows {
        if let (Cell::Text(name), Cell::Num(z)) = (&row[0], &row[4]) {
            if *z > 3.0 {
                warnings.push(format!("{name}: oracle differs from the closed form by {z:.2} standard errors"));
            }
        }
    }
    let c = correction_input(cfg)?;
    Ok(Outcome { table, warnings, details: json!({ "correction_t3": correction_t3(&c) }) })
}

fn dual(cfg: &RunConfig, stream: SeedStream) -> fluctsel_core::Result<Outcome> {
    let (m, n) = (&cfg.model, &cfg.numerics);
    let init = cfg.init.condition();
    let dcfg = DualConfig { n_max: n.n_max, thinning: cfg.dual.thinning, ..DualConfig::from_params(m)? };
    let idx = cfg.dual.phi.index();
    let est = moment_via_duality(&DualState::indicator(idx)?, n.horizon, &init, &dcfg, n.replicas, stream)?;

    let neutral = (m.sigma == 0.0).then(|| {
        let a = Modifier::of_type(idx);
        let zero = first_moment(a, BTarget::Zero, n.horizon, &init, m);
        if fluctsel_core::model::b_allele(idx) == 0 {
            zero
        } else {
            first_moment(a, BTarget::Any, n.horizon, &init, m) - zero
        }
    });
    let mut table = Table::new(&["phi", "t", "estimate", "se", "replicas", "truncated", "peak_n", "flagged", "neutral_closed_form"]);
    table.push(vec![
        format!("{:?}", cfg.dual.phi).to_lowercase().as_str().into(),
        n.horizon.into(),
        est.estimate.mean.into(),
        est.estimate.se.into(),
        est.replicas.into(),
        est.truncated.into(),
        (est.peak_n as u64).into(),
        est.flagged.into(),
        neutral.map_or(Cell::Empty, Cell::Num),
    ]);
    let mut warnings = Vec::new();
    if est.flagged {
        warnings.push(format!("{} of {} dual replicas hit n_max = {}; the estimate is biased", est.truncated, est.replicas, n.n_max));
    }
    Ok(Outcome { table, warnings, details: json!({ "thinning": dcfg.thinning, "peak_n": est.peak_n }) })
}
