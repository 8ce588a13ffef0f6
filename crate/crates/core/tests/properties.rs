use fluctsel_core::dual::{apply_jump_with, chi, DualConfig, DualJump, DualState};
use fluctsel_core::fixation::{correction_cor1, correction_t3, CorrectionInput};
use fluctsel_core::limit::simulate_limit;
use fluctsel_core::model::{covariance_limit, diffusion_limit, drift_limit, drift_prelimit, marginals, LIMIT_NOISES};
use fluctsel_core::neutral::{integral_i1, integral_i2, integral_i3, total_integral};
use fluctsel_core::prelimit::simulate_prelimit;
use fluctsel_core::{InitialCondition, ModelParams, SimplexState};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn state() -> impl Strategy<Value = SimplexState> {
    prop::array::uniform4(0.0..1.0f64)
        .prop_filter("nonzero mass", |w| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|w| {
            let s: f64 = w.iter().sum();
            let x = [w[0] / s, w[1] / s, w[2] / s, 1.0 - (w[0] + w[1] + w[2]) / s];
            SimplexState::from_array([x[0], x[1], x[2], x[3].max(0.0)]).unwrap()
        })
}

fn params() -> impl Strategy<Value = ModelParams> {
    (0.0..3.0f64, 0.1..5.0f64, 0.0..5.0f64, 0.0..5.0f64, unit(), 1u32..20).prop_map(|(sigma, gamma, a, b, r, n)| {
        ModelParams { sigma, gamma, theta_l: a.min(b), theta_h: a.max(b), r, n_scale: n }
    })
}

fn correction_input() -> impl Strategy<Value = CorrectionInput> {
    (unit(), unit(), unit(), unit(), 0.0..10.0f64, 0.0..10.0f64)
        .prop_map(|(x, p, q, r, tl, th)| CorrectionInput::new(x, p, q, r, tl, th).unwrap())
}

fn neutral_for(c: &CorrectionInput) -> ModelParams {
    ModelParams { theta_l: c.theta_l, theta_h: c.theta_h, r: c.r, ..ModelParams::default() }
}

proptest! {
    #[test]
    fn drifts_conserve_mass(s in state(), p in params(), up in any::<bool>()) {
        let z = if up { 1.0 } else { -1.0 };
        prop_assert!(drift_prelimit(&s, z, &p).iter().sum::<f64>().abs() < 1e-13);
        prop_assert!(drift_limit(&s, &p).iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn noise_columns_sum_to_zero(s in state(), p in params()) {
        let m = diffusion_limit(&s, &p);
        let mut cols = [0.0; LIMIT_NOISES];
        for row in &m {
            cols.iter_mut().zip(row).for_each(|(c, v)| *c += v);
        }
        prop_assert!(cols.iter().all(|c| c.abs() < 1e-15), "{cols:?}");
    }

    #[test]
    fn noise_matrix_reproduces_covariance(s in state(), p in params()) {
        let m = diffusion_limit(&s, &p);
        let a = covariance_limit(&s, &p);
        for i in 0..4 {
            for j in 0..4 {
                let mm: f64 = (0..LIMIT_NOISES).map(|k| m[i][k] * m[j][k]).sum();
                prop_assert!((mm - a[i][j]).abs() < 1e-12, "entry ({i},{j}): {mm} vs {}", a[i][j]);
            }
        }
    }

    #[test]
    fn initial_condition_round_trips(x in unit(), p in unit(), q in unit()) {
        let init = InitialCondition::new(x, p, q).unwrap();
        let s = init.to_state().unwrap();
        let m = marginals(&s);
        prop_assert!((m.x_h - x).abs() < 1e-15);
        if m.x_h > 0.0 {
            prop_assert!((s.x_h0() / m.x_h - p).abs() < 1e-12);
        }
        if m.x_l > 0.0 {
            prop_assert!((s.x_l0() / m.x_l - q).abs() < 1e-12);
        }
    }

    #[test]
    fn correction_forms_agree(c in correction_input()) {
        prop_assert!((correction_t3(&c) - correction_cor1(&c)).abs() < 1e-12);
    }

    #[test]
    fn integrals_sum_to_correction(c in correction_input()) {
        let p = neutral_for(&c);
        let sum = integral_i1(&c.init, &p) + 2.0 * integral_i2(&c.init, &p) + 2.0 * integral_i3(&c.init, &p);
        prop_assert!((sum - total_integral(&c.init, &p)).abs() < 1e-15);
        prop_assert!((total_integral(&c.init, &p) - correction_t3(&c)).abs() < 1e-12);
    }

    #[test]
    fn correction_flips_sign_under_mirror(c in correction_input()) {
        prop_assert!((correction_t3(&c) + correction_t3(&c.mirrored())).abs() < 1e-12);
    }

    #[test]
    fn correction_is_bounded(c in correction_input()) {
        prop_assert!(correction_t3(&c).abs() <= 4.0);
    }

    #[test]
    fn balanced_case_has_closed_form(x in unit(), r in unit(), tl in 0.0..10.0f64, th in 0.0..10.0f64) {
        let c = CorrectionInput::new(x, r, r, r, tl, th).unwrap();
        let want = 4.0 * x * (1.0 - x) * r * (1.0 - r) * (th - tl) / ((3.0 + 2.0 * tl) * (3.0 + 2.0 * th));
        prop_assert!((correction_t3(&c) - want).abs() < 1e-12);
    }

    #[test]
    fn chi_is_symmetric(a in 0u8..2, b in 0u8..2) {
        prop_assert_eq!(chi(a, b), chi(b, a));
    }
}

fn dual_cfg() -> impl Strategy<Value = DualConfig> {
    (0.0..0.45f64, 0.0..3.0f64, 0.0..3.0f64, unit(), 0.05..=1.0f64).prop_map(|(s, a, b, r, k)| DualConfig {
        sigma_sq_over_gamma: s,
        theta_l: a.min(b),
        theta_h: a.max(b),
        r,
        theta_max: a.max(b).max(1e-3),
        n_max: 6,
        thinning: k,
        drop_constant_axes: false,
    })
}

fn jump_for(n: usize, pick: (usize, usize, u8)) -> DualJump {
    let k = pick.0 % n;
    let l = (k + 1 + pick.1 % (n - 1).max(1)) % n;
    match pick.2 % 5 {
        0 if n >= 2 => DualJump::Coalesce { k: k.min(l), l: k.max(l) },
        1 => DualJump::Mutate { k },
        2 if n >= 2 => DualJump::SelectPair { k, l },
        3 => DualJump::SelectSplit { k },
        _ => DualJump::SelectSelf { k },
    }
}

fn table(n: usize) -> impl Strategy<Value = DualState> {
    prop::collection::vec(-2.0..2.0f64, 1 << (2 * n)).prop_map(move |xi| DualState::new(n, xi).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dual_jumps_are_linear(
        cfg in dual_cfg(),
        (a, b) in (table(2), table(2)),
        wa in -3.0..3.0f64,
        wb in -3.0..3.0f64,
        pick in (0usize..8, 0usize..8, 0u8..5),
        accept in 0.0..1.0f64,
    ) {
        let jump = jump_for(2, pick);
        let mix = DualState::new(2, a.xi.iter().zip(&b.xi).map(|(x, y)| wa * x + wb * y).collect()).unwrap();
        let ja = apply_jump_with(&a, jump, &cfg, accept);
        let jb = apply_jump_with(&b, jump, &cfg, accept);
        let jm = apply_jump_with(&mix, jump, &cfg, accept);
        prop_assert_eq!(jm.n, ja.n);
        for i in 0..jm.xi.len() {
            let want = wa * ja.xi[i] + wb * jb.xi[i];
            prop_assert!((jm.xi[i] - want).abs() < 1e-9 * (1.0 + want.abs()), "entry {i}: {} vs {want}", jm.xi[i]);
        }
    }

    #[test]
    fn dual_jumps_preserve_constants(
        cfg in dual_cfg(),
        n in 1usize..4,
        c in -5.0..5.0f64,
        pick in (0usize..8, 0usize..8, 0u8..5),
        accept in 0.0..1.0f64,
    ) {
        let jump = jump_for(n, pick);
        let out = apply_jump_with(&DualState::constant(n, c).unwrap(), jump, &cfg, accept);
        prop_assert!(out.xi.iter().all(|&v| (v - c).abs() <= 1e-14 * c.abs()));
        let out = apply_jump_with(&DualState::constant(n, 1.0).unwrap(), jump, &cfg, accept);
        prop_assert!(out.xi.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn paths_stay_on_simplex(x in unit(), p in unit(), q in unit(), seed in any::<u64>(), prm in params()) {
        let init = InitialCondition::new(x, p, q).unwrap();
        let limit_params = ModelParams { sigma: prm.sigma.min(1.0), ..prm };
        let traj = simulate_limit(&limit_params, &init, 0.2, 1e-3, seed).unwrap();
        prop_assert!(traj.validate().is_ok());
        for s in &traj.states {
            prop_assert!(s.as_array().iter().all(|&v| v >= 0.0));
            prop_assert!((s.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let pre = ModelParams { n_scale: prm.n_scale.min(8), ..limit_params };
        let traj = simulate_prelimit(&pre, &init, 0.2, 1e-3, seed).unwrap();
        prop_assert!(traj.validate().is_ok());
        for s in &traj.states {
            prop_assert!(s.as_array().iter().all(|&v| v >= 0.0));
            prop_assert!((s.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn paths_are_reproducible(seed in any::<u64>(), x in unit()) {
        let p = ModelParams { sigma: 0.7, gamma: 1.3, theta_l: 0.2, theta_h: 1.1, r: 0.4, n_scale: 3 };
        let init = InitialCondition::new(x, 0.3, 0.6).unwrap();
        prop_assert_eq!(simulate_limit(&p, &init, 0.1, 1e-3, seed).unwrap(), simulate_limit(&p, &init, 0.1, 1e-3, seed).unwrap());
        prop_assert_eq!(simulate_prelimit(&p, &init, 0.1, 1e-3, seed).unwrap(), simulate_prelimit(&p, &init, 0.1, 1e-3, seed).unwrap());
    }
}
