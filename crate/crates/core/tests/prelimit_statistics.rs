use fluctsel_core::limit::limit_snapshots;
use fluctsel_core::prelimit::{convergence_study, prelimit_terminal, simulate_prelimit, step_env_counted, TelegraphEnv};
use fluctsel_core::rng::rng_from_seed;
use fluctsel_core::stats::Estimate;
use fluctsel_core::{InitialCondition, ModelParams, SeedStream};

#[test]
fn neutral_prelimit_is_a_martingale() {
    let p = ModelParams { n_scale: 8, ..ModelParams::default() };
    let init = InitialCondition::new(0.35, 0.5, 0.5).unwrap();
    let end = prelimit_terminal(&p, &init, 1.0, 1e-3, 10_000, SeedStream::new(3, "martingale")).unwrap();
    let xh: Vec<f64> = end.iter().map(|s| s.x_h0() + s.x_h1()).collect();
    let est = Estimate::from_samples(&xh);
    assert!(est.within(0.35, 3.0), "{est:?}");
}

#[test]
fn vertex_stays_put() {
    let p = ModelParams { sigma: 1.0, n_scale: 4, ..ModelParams::default() };
    let init = InitialCondition::new(1.0, 1.0, 0.0).unwrap();
    let traj = simulate_prelimit(&p, &init, 1.0, 1e-3, 5).unwrap();
    assert!(traj.states.iter().all(|s| s.as_array() == &[0.0, 0.0, 1.0, 0.0]));
}

#[test]
fn switch_count_matches_rate() {
    let rate = 8.0;
    let (dt, horizon) = (1e-2, 50.0);
    let steps = (horizon / dt) as usize;
    let counts: Vec<f64> = (0..400)
        .map(|k| {
            let mut rng = rng_from_seed(1000 + k);
            let mut env = TelegraphEnv::new(1, rate).unwrap();
            let mut flips = 0u32;
            for _ in 0..steps {
                let (next, f) = step_env_counted(env, dt, &mut rng);
                env = next;
                flips += f;
            }
            flips as f64
        })
        .collect();
    let est = Estimate::from_samples(&counts);
    assert!(est.within(rate * horizon, 3.0), "{est:?}");
}

#[test]
fn recorded_environment_switches_at_the_prelimit_rate() {
    let p = ModelParams { sigma: 0.0, gamma: 2.0, n_scale: 4, ..ModelParams::default() };
    let init = InitialCondition::new(0.5, 0.5, 0.5).unwrap();
    let traj = simulate_prelimit(&p, &init, 200.0, 1e-3, 9).unwrap();
    let env = traj.env.unwrap();
    let plus = env.iter().filter(|&&z| z == 1).count() as f64 / env.len() as f64;
    // occupation of a two-state chain with switch rate 16 over 200 time units
    // has standard deviation about sqrt(1 / (4 * 2 * 16 * 200))
    assert!((plus - 0.5).abs() < 3.0 * (1.0f64 / (4.0 * 2.0 * 16.0 * 200.0)).sqrt(), "{plus}");
}

#[test]
fn without_selection_prelimit_and_limit_agree() {
    let p = ModelParams { theta_l: 0.1, theta_h: 1.0, r: 0.5, ..ModelParams::default() };
    let init = InitialCondition::new(0.5, 1.0, 0.0).unwrap();
    let study = convergence_study(&p, &init, 1.0, &[1, 4, 16], 4000, SeedStream::new(3, "neutral-study")).unwrap();
    for row in &study.rows {
        assert!(row.delta_mean_xh.within(3.0) && row.delta_var_xh.within(3.0), "{row:?}");
        assert!(row.delta_mean_x0.within(3.0) && row.delta_var_x0.within(3.0), "{row:?}");
    }
    assert!(study.warning.is_none());
}

#[test]
fn fast_environment_approaches_limit() {
    let p = ModelParams { sigma: 0.5, gamma: 1.0, theta_l: 0.1, theta_h: 1.0, r: 0.5, n_scale: 1 };
    let init = InitialCondition::new(0.5, 1.0, 0.0).unwrap();
    let stream = SeedStream::new(3, "fast");
    let end = prelimit_terminal(&ModelParams { n_scale: 32, ..p }, &init, 1.0, 5e-4, 10_000, stream.child("pre")).unwrap();
    let lim = limit_snapshots(&p, &init, &[1.0], 1e-3, 10_000, stream.child("limit")).unwrap();
    let a = Estimate::from_samples(&end.iter().map(|s| s.x_h0() + s.x_h1()).collect::<Vec<_>>());
    let b = Estimate::from_samples(&lim.iter().map(|s| s[0].x_h0() + s[0].x_h1()).collect::<Vec<_>>());
    assert!(a.z_distance(&b) <= 3.0, "{a:?} vs {b:?}");
}
