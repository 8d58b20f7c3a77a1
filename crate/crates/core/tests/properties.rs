use dermpc::agents::{prox_via_qp, Agent, GridAgent, LoadAgent, PvAgent, QuadraticAgent, StorageAgent, StorageParams, Terminal};
use dermpc::exchange::{rescale_rho, run_exchange, ExchangeSettings, ExchangeState, ExchangeStatus, RhoAdapt};
use dermpc::forecast::{fit_baseline, fit_residual_ar, HistoryBuffer};
use dermpc::mpc::Mode;
use dermpc::scenario::ScenarioConfig;
use dermpc::types::{smoothing_cost, SmoothingWeights};
use dermpc_qp::QpSettings;
use proptest::collection::vec;
use proptest::prelude::*;

fn tight() -> QpSettings {
    QpSettings {
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        max_iter: 200_000,
        ..QpSettings::default()
    }
}

fn weights() -> impl Strategy<Value = SmoothingWeights> {
    (0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64).prop_map(|(alpha_range, alpha_diff, alpha_curv)| SmoothingWeights {
        alpha_range,
        alpha_diff,
        alpha_curv,
    })
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn storage_params() -> impl Strategy<Value = StorageParams> {
    (1.0..20.0f64, 1.0..20.0f64, 0.7..0.99f64, 0.7..0.99f64, 0.95..1.0f64, 20.0..100.0f64).prop_map(
        |(c_max, d_max, eta_c, eta_d, eta_q, q_cap)| StorageParams {
            c_max,
            d_max,
            eta_c,
            eta_d,
            eta_q,
            q_min_frac: 0.1,
            q_max_frac: 0.9,
            q_cap,
            alpha_cyc: 0.0,
            throughput_cost: 0.0,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_cost_is_convex(
        (p, q) in (3usize..12).prop_flat_map(|n| (vec(-50.0..50.0f64, n), vec(-50.0..50.0f64, n))),
        lambda in 0.0..1.0f64,
        w in weights(),
    ) {
        let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let lhs = smoothing_cost(&mix, &w).unwrap();
        let rhs = lambda * smoothing_cost(&p, &w).unwrap() + (1.0 - lambda) * smoothing_cost(&q, &w).unwrap();
        prop_assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn smoothing_cost_ignores_offsets(p in vec(-50.0..50.0f64, 3..12), c in -100.0..100.0f64, w in weights()) {
        let shifted: Vec<f64> = p.iter().map(|x| x + c).collect();
        let (a, b) = (smoothing_cost(&p, &w).unwrap(), smoothing_cost(&shifted, &w).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn expectile_baseline_rises_with_asymmetry(
        data in vec(0.0..100.0f64, 12..24),
        g1 in 0.2..5.0f64,
        extra in 0.0..10.0f64,
    ) {
        let period = 4;
        let len = data.len() / period * period;
        let hist = HistoryBuffer::from_values(0, &data[..len], len);
        let lo = fit_baseline(&hist, g1, 0.0, period).unwrap();
        let hi = fit_baseline(&hist, g1 + extra, 0.0, period).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(*b >= *a - 1e-7, "{lo:?} {hi:?}");
        }
    }

    #[test]
    fn ar_fit_is_least_squares(
        r in vec(-10.0..10.0f64, 20..60),
        n in 1usize..4,
        perturb in vec(-0.5..0.5f64, 4),
    ) {
        let a = fit_residual_ar(&r, n);
        let misfit = |a: &[f64]| -> f64 {
            (n..r.len())
                .map(|t| {
                    let pred: f64 = (0..n).map(|j| a[j] * r[t - 1 - j]).sum();
                    (pred - r[t]).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        };
        let other: Vec<f64> = a.iter().zip(&perturb).map(|(x, d)| x + d).collect();
        prop_assert!(misfit(&a) <= misfit(&other) + 1e-9);
    }

    #[test]
    fn load_and_pv_prox_match_their_qp_form(
        f in vec(1.0..100.0f64, 4),
        v in vec(-150.0..150.0f64, 4),
        prev in vec(0.0..100.0f64, 3),
        beta in 0.0..1.0f64,
        alpha in 0.0..2.0f64,
        alpha_prev in 0.0..1.0f64,
        rho in 0.1..5.0f64,
    ) {
        let mut load = LoadAgent::new(f.clone(), beta, alpha).with_prev(prev.clone(), alpha_prev);
        let closed = load.prox(&v, rho).unwrap();
        let qp = prox_via_qp(&load, &v, rho, &tight()).unwrap();
        for (a, b) in closed.iter().zip(&qp) {
            prop_assert!((a - b).abs() <= 1e-6, "{closed:?} {qp:?}");
        }

        let g: Vec<f64> = f.iter().map(|x| -x).collect();
        let pprev: Vec<f64> = prev.iter().map(|x| -x).collect();
        let mut pv = PvAgent::new(g, alpha).with_prev(pprev, alpha_prev);
        let closed = pv.prox(&v, rho).unwrap();
        let qp = prox_via_qp(&pv, &v, rho, &tight()).unwrap();
        for (a, b) in closed.iter().zip(&qp) {
            prop_assert!((a - b).abs() <= 1e-6, "{closed:?} {qp:?}");
        }
    }

    #[test]
    fn prox_is_nonexpansive(
        v1 in vec(-30.0..30.0f64, 6),
        v2 in vec(-30.0..30.0f64, 6),
        params in storage_params(),
        q0 in 0.2..0.8f64,
        rho in 0.2..4.0f64,
    ) {
        let q_init = q0 * params.q_cap;
        let mut agents: Vec<Box<dyn Agent>> = vec![
            Box::new(LoadAgent::new(vec![20.0, 30.0, 25.0, 10.0, 15.0, 30.0], 0.4, 0.5)),
            Box::new(PvAgent::new(vec![-20.0, -30.0, -25.0, 0.0, -15.0, -10.0], 0.3)),
            Box::new(StorageAgent::new("s", params, 0.5, 6, q_init).with_settings(tight())),
            Box::new(GridAgent::new(vec![0.1, 0.3, 0.2, 0.05, 0.4, 0.1], 0.25, 25.0, SmoothingWeights {
                alpha_range: 0.5,
                alpha_diff: 0.2,
                alpha_curv: 0.1,
            }).with_settings(tight())),
        ];
        for a in agents.iter_mut() {
            let p1 = a.prox(&v1, rho).unwrap();
            let p2 = a.prox(&v2, rho).unwrap();
            prop_assert!(norm(&p1, &p2) <= norm(&v1, &v2) + 1e-6, "{}", a.name());
        }
    }

    #[test]
    fn storage_prox_never_round_trips(
        v in vec(-30.0..30.0f64, 8),
        params in storage_params(),
        q0 in 0.2..0.8f64,
        rho in 0.2..4.0f64,
    ) {
        let dt = 0.5;
        let q_init = q0 * params.q_cap;
        let mut agent = StorageAgent::new("s", params.clone(), dt, 8, q_init).with_settings(tight());
        let (p, q) = agent.prox_with_charge(&v, rho).unwrap();
        let margin = 1e-3 * params.q_cap;
        prop_assume!(q.iter().all(|&x| x > params.q_min() + margin && x < params.q_max() - margin));
        // recover the charge and discharge parts from the net power and the charge step
        let eps = 1e-4 * params.c_max;
        for k in 0..8 {
            let gain = (q[k + 1] - params.eta_q * q[k]) / dt;
            let pd = (params.eta_c * p[k] - gain) / (params.eta_c - 1.0 / params.eta_d);
            let pc = p[k] + pd;
            prop_assert!(!(pc > eps && pd > eps), "step {k}: charge {pc} discharge {pd}");
        }
    }

    #[test]
    fn ev_schedule_is_zero_while_away(
        v in vec(-10.0..10.0f64, 10),
        start in 0usize..5,
        len in 0usize..5,
        want in 0.0..30.0f64,
    ) {
        let params = StorageParams {
            c_max: 7.2,
            d_max: 7.2,
            eta_c: 0.9,
            eta_d: 0.9,
            eta_q: 1.0,
            q_min_frac: 0.0,
            q_max_frac: 1.0,
            q_cap: 60.0,
            alpha_cyc: 0.0,
            throughput_cost: 0.0,
        };
        let mut ev = StorageAgent::new("ev", params.clone(), 0.25, 10, 10.0)
            .with_window(start, start + len)
            .with_terminal(Terminal::Departure(want))
            .with_settings(tight());
        let (p, q) = ev.prox_with_charge(&v, 1.0).unwrap();
        for (t, x) in p.iter().enumerate() {
            if t < start || t >= start + len {
                prop_assert_eq!(*x, 0.0);
            } else {
                prop_assert!(*x <= params.c_max + 1e-5 && *x >= -params.d_max - 1e-5);
            }
        }
        for x in &q {
            prop_assert!(*x >= params.q_min() - 1e-5 && *x <= params.q_max() + 1e-5);
        }
    }

    #[test]
    fn rescaling_keeps_the_unscaled_price(
        u in vec(-5.0..5.0f64, 1..8),
        rho in 0.01..10.0f64,
        new_rho in 0.01..10.0f64,
    ) {
        let n = u.len();
        let state = ExchangeState::new(vec![vec![0.0; n]; 2], u, rho);
        let scaled = rescale_rho(&state, new_rho);
        for (a, b) in state.price().iter().zip(scaled.price()) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(1e-300));
        }
    }

    #[test]
    fn scenario_config_round_trips(
        seed in any::<u64>(),
        horizon in 3usize..200,
        beta in 0.0..1.0f64,
        limit in 1.0..1000.0f64,
        rho in 1e-4..10.0f64,
        count in 0usize..40,
        mode in prop_oneof![Just(Mode::Admm), Just(Mode::Centralized), Just(Mode::Prescient)],
        warm in any::<bool>(),
    ) {
        let mut cfg = ScenarioConfig::with_seed(seed);
        cfg.grid.horizon_steps = horizon;
        cfg.site.beta = beta;
        cfg.site.p_pcc_limit = limit;
        cfg.weights.rho = rho;
        cfg.fleet.count = count;
        cfg.mode = mode;
        cfg.admm.warm_start = warm;
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn exchange_is_deterministic_across_parallelism(
        targets in vec(vec(-5.0..5.0f64, 4), 2..5),
        threads in 2usize..5,
    ) {
        let make = || -> Vec<QuadraticAgent> {
            targets
                .iter()
                .enumerate()
                .map(|(i, t)| QuadraticAgent::new(format!("q{i}"), t.clone(), vec![1.0; 4]).with_box(vec![-4.0; 4], vec![4.0; 4]))
                .collect()
        };
        let settings = |parallelism| ExchangeSettings {
            rho: 1.0,
            eps_pri: 1e-6,
            eps_dual: 1e-6,
            max_iter: 500,
            rho_adapt: RhoAdapt::None,
            parallelism,
        };
        let (mut a, mut b) = (make(), make());
        let x = run_exchange(&mut a, None, &settings(1)).unwrap();
        let y = run_exchange(&mut b, None, &settings(threads)).unwrap();
        prop_assert_eq!(&x.state.schedules, &y.state.schedules);
        prop_assert_eq!(x.iterations(), y.iterations());
        // balance at termination
        let n = targets.len() as f64;
        let total: f64 = (0..4)
            .map(|t| x.state.schedules.iter().map(|s| s[t]).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt();
        if let (ExchangeStatus::Converged, Some(last)) = (x.status, x.trace.last()) {
            prop_assert!((total - n * last.r_norm).abs() <= 1e-9 * total.max(1.0));
        }
    }
}
