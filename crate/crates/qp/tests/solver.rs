use dermpc_qp::{
    kkt_residuals, l1_to_qp, range_to_qp, solve_qp, CanonicalQp, CscMatrix, DiffOperator, QpBuilder,
    QpSettings, QpStatus, QpWorkspace,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INF: f64 = f64::INFINITY;

fn settings() -> QpSettings {
    QpSettings::default()
}

/// Exact minimizer of a strictly convex box-constrained QP by trying every
/// combination of {free, at lower, at upper}.
fn enumerate_active_sets(p: &DMatrix<f64>, q: &DVector<f64>, l: &[f64], u: &[f64]) -> (Vec<f64>, f64) {
    let n = q.len();
    let mut best = (vec![], INF);
    let combos = 3usize.pow(n as u32);
    'pattern: for code in 0..combos {
        let mut c = code;
        let mut state = vec![0u8; n];
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut x = vec![0.0; n];
        let mut free = Vec::new();
        for j in 0..n {
            match state[j] {
                0 => free.push(j),
                1 if l[j].is_finite() => x[j] = l[j],
                2 if u[j].is_finite() => x[j] = u[j],
                _ => continue 'pattern,
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let mut pff = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (a, &i) in free.iter().enumerate() {
                rhs[a] = -q[i];
                for j in 0..n {
                    if state[j] != 0 {
                        rhs[a] -= p[(i, j)] * x[j];
                    }
                }
                for (b, &j) in free.iter().enumerate() {
                    pff[(a, b)] = p[(i, j)];
                }
            }
            let sol = match pff.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => continue,
            };
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        if (0..n).any(|j| x[j] < l[j] - 1e-9 || x[j] > u[j] + 1e-9) {
            continue;
        }
        let xv = DVector::from_vec(x.clone());
        let obj = 0.5 * xv.dot(&(p * &xv)) + q.dot(&xv);
        if obj < best.1 {
            best = (x, obj);
        }
    }
    best
}

fn random_box_qp(rng: &mut ChaCha8Rng) -> (CanonicalQp, DMatrix<f64>, DVector<f64>) {
    let n = rng.random_range(1..=6);
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = &g * g.transpose() + DMatrix::identity(n, n) * 0.05;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for j in 0..n {
        let a: f64 = rng.random_range(-2.0..1.0);
        let w: f64 = rng.random_range(0.0..2.0);
        lower[j] = if rng.random_bool(0.15) { -INF } else { a };
        upper[j] = if rng.random_bool(0.15) { INF } else { a + w };
    }
    let dense: Vec<f64> = (0..n * n).map(|k| p[(k / n, k % n)]).collect();
    let qp = CanonicalQp {
        p: CscMatrix::from_dense(n, n, &dense),
        q: q.iter().copied().collect(),
        a: CscMatrix::zeros(0, n),
        b: vec![],
        lower,
        upper,
        constant: 0.0,
    };
    (qp, p, q)
}

#[test]
fn unconstrained_scalar_quadratic() {
    let mut b = QpBuilder::new();
    let x = b.add_var(-INF, INF);
    b.add_square(&[(x, 1.0)], 3.0, 1.0);
    let sol = solve_qp(&b.build(), &settings(), None).unwrap();
    assert_eq!(sol.status, QpStatus::Solved);
    assert!((sol.x[0] - 3.0).abs() < 1e-6);
}

#[test]
fn active_lower_bound_gives_objective_four() {
    let mut b = QpBuilder::new();
    let x = b.add_var(2.0, INF);
    b.add_product(x, x, 1.0);
    let sol = solve_qp(&b.build(), &settings(), None).unwrap();
    assert!((sol.x[0] - 2.0).abs() < 1e-6);
    assert!((sol.objective - 4.0).abs() < 1e-5);
}

#[test]
fn two_variable_equality_matches_hand_kkt() {
    let mut b = QpBuilder::new();
    let x1 = b.add_var(-INF, INF);
    let x2 = b.add_var(-INF, INF);
    b.add_square(&[(x1, 1.0)], 1.0, 1.0);
    b.add_square(&[(x2, 1.0)], 2.0, 1.0);
    b.add_eq(&[(x1, 1.0), (x2, 1.0)], 0.0);
    let sol = solve_qp(&b.build(), &settings(), None).unwrap();
    assert_eq!(sol.status, QpStatus::Solved);
    assert!((sol.x[0] + 0.5).abs() < 1e-6 && (sol.x[1] - 0.5).abs() < 1e-6);
}

#[test]
fn matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..200 {
        let (qp, p, q) = random_box_qp(&mut rng);
        let (x_star, obj_star) = enumerate_active_sets(&p, &q, &qp.lower, &qp.upper);
        let sol = solve_qp(&qp, &settings(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved, "case {case}");
        assert!(
            (sol.objective - obj_star).abs() <= 1e-5,
            "case {case}: {} vs {obj_star} (x {:?} vs {:?})",
            sol.objective,
            sol.x,
            x_star
        );
    }
}

#[test]
fn infeasible_equality_reported() {
    let mut b = QpBuilder::new();
    let x = b.add_vars(3, 0.0, 1.0);
    for &v in &x {
        b.add_square(&[(v, 1.0)], 0.5, 1.0);
    }
    b.add_eq(&[(x[0], 1.0), (x[1], 1.0)], 0.5);
    b.add_eq(&[(x[0], 1.0), (x[1], 1.0), (x[2], 1.0)], 5.0);
    let sol = solve_qp(&b.build(), &settings(), None).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
}

#[test]
fn max_iterations_returns_residuals() {
    let mut b = QpBuilder::new();
    let xs = b.add_vars(5, -1.0, 1.0);
    for (k, &x) in xs.iter().enumerate() {
        b.add_square(&[(x, 1.0), (xs[(k + 1) % 5], -0.7)], 2.0, 1.0);
    }
    let s = QpSettings {
        max_iter: 2,
        polish: false,
        ..settings()
    };
    let sol = solve_qp(&b.build(), &s, None).unwrap();
    assert_eq!(sol.status, QpStatus::MaxIterations);
    assert!(sol.primal_residual.is_finite() && sol.dual_residual.is_finite());
    assert_eq!(sol.iterations, 2);
}

#[test]
fn workspace_linear_cost_update_matches_fresh_solve() {
    let mut b = QpBuilder::new();
    let xs = b.add_vars(8, -1.0, 2.0);
    for k in 0..7 {
        b.add_square(&[(xs[k + 1], 1.0), (xs[k], -1.0)], 0.0, 3.0);
    }
    b.add_eq(&xs.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>(), 1.0);
    let qp = b.build();
    let mut ws = QpWorkspace::new(&qp, &settings()).unwrap();
    for shift in 0..5 {
        let q: Vec<f64> = (0..8).map(|k| ((k + shift) as f64).sin() * 4.0).collect();
        ws.update_linear_cost(&q);
        let warm = ws.solve();
        let mut fresh_qp = qp.clone();
        fresh_qp.q = q;
        let fresh = solve_qp(&fresh_qp, &settings(), None).unwrap();
        assert_eq!(warm.status, QpStatus::Solved);
        assert!((warm.objective - fresh.objective).abs() < 1e-5);
    }
}

#[test]
fn l1_zero_weight_keeps_optimum() {
    let mut b = QpBuilder::new();
    let xs = b.add_vars(3, -5.0, 5.0);
    for (k, &x) in xs.iter().enumerate() {
        b.add_square(&[(x, 1.0)], k as f64, 1.0);
    }
    let base = b.build();
    let op = DiffOperator::first_difference(&xs);
    let ext = l1_to_qp(&[0.0, 0.0], &op, &base);
    let a = solve_qp(&base, &settings(), None).unwrap();
    let e = solve_qp(&ext.qp, &settings(), None).unwrap();
    assert!((a.objective - e.objective).abs() < 1e-6);
}

#[test]
fn l1_soft_threshold() {
    // |x| + (x-1)^2 has its minimum at 0.5
    let mut b = QpBuilder::new();
    let x = b.add_var(-INF, INF);
    b.add_square(&[(x, 1.0)], 1.0, 1.0);
    let mut op = DiffOperator::new();
    op.push_row(vec![(x, 1.0)], 0.0);
    let ext = l1_to_qp(&[1.0], &op, &b.build());
    let sol = solve_qp(&ext.qp, &settings(), None).unwrap();
    assert!((sol.x[x] - 0.5).abs() < 1e-6);
    assert!((sol.objective - 0.75).abs() < 1e-6);
}

#[test]
fn l1_fixed_point() {
    let mut b = QpBuilder::new();
    let x = b.add_var(-INF, INF);
    b.add_eq(&[(x, 1.0)], 3.0);
    let mut op = DiffOperator::new();
    op.push_row(vec![(x, 1.0)], 0.0);
    let ext = l1_to_qp(&[2.0], &op, &b.build());
    let sol = solve_qp(&ext.qp, &settings(), None).unwrap();
    assert!((sol.objective - 6.0).abs() < 1e-5);
}

#[test]
fn range_zero_weight_keeps_optimum() {
    let mut b = QpBuilder::new();
    let xs = b.add_vars(3, -INF, INF);
    for (k, &x) in xs.iter().enumerate() {
        b.add_square(&[(x, 1.0)], k as f64, 1.0);
    }
    let base = b.build();
    let ext = range_to_qp(0.0, &xs, &base);
    let sol = solve_qp(&ext.qp, &settings(), None).unwrap();
    assert!(sol.objective.abs() < 1e-6);
}

#[test]
fn range_of_fixed_series() {
    let mut b = QpBuilder::new();
    let xs = b.add_vars(3, -INF, INF);
    for (&x, v) in xs.iter().zip([1.0, 4.0, 2.0]) {
        b.set_bounds(x, v, v);
    }
    let ext = range_to_qp(1.0, &xs, &b.build());
    let sol = solve_qp(&ext.qp, &settings(), None).unwrap();
    assert!((sol.objective - 3.0).abs() < 1e-5);
}

#[test]
fn heavy_range_collapses_to_common_value() {
    // with a large weight the series becomes constant; the best constant
    // minimizes Σ(c − t)², which is the mean target 1
    let mut b = QpBuilder::new();
    let xs = b.add_vars(3, -INF, INF);
    for (k, &x) in xs.iter().enumerate() {
        b.add_square(&[(x, 1.0)], k as f64, 1.0);
    }
    let ext = range_to_qp(10.0, &xs, &b.build());
    let sol = solve_qp(&ext.qp, &settings(), None).unwrap();
    assert_eq!(sol.status, QpStatus::Solved);
    for &x in &xs {
        assert!((sol.x[x] - 1.0).abs() < 1e-5);
    }
    assert!((sol.objective - 2.0).abs() < 1e-5);
}

fn random_general_qp(seed: u64) -> CanonicalQp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=12);
    let m = rng.random_range(0..n / 2 + 1);
    let rank = rng.random_range(1..=n);
    let g = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let p = &g * g.transpose();
    let mut b = QpBuilder::new();
    let xs: Vec<usize> = (0..n)
        .map(|_| {
            let c: f64 = rng.random_range(-1.0..1.0);
            b.add_var(c - rng.random_range(0.5..3.0), c + rng.random_range(0.5..3.0))
        })
        .collect();
    for i in 0..n {
        for j in i..n {
            let w = if i == j { 0.5 * p[(i, i)] } else { p[(i, j)] };
            b.add_product(xs[i], xs[j], w);
        }
        b.add_linear(xs[i], rng.random_range(-2.0..2.0));
    }
    // equalities satisfied by a known interior point so the instance is feasible
    let x0: Vec<f64> = (0..n)
        .map(|j| {
            let (l, u) = b.bounds(xs[j]);
            0.5 * (l + u)
        })
        .collect();
    for _ in 0..m {
        let mut row = Vec::new();
        for &x in &xs {
            if rng.random_bool(0.6) {
                row.push((x, rng.random_range(-1.0..1.0)));
            }
        }
        let rhs: f64 = row.iter().map(|&(x, c)| c * x0[x]).sum();
        b.add_eq(&row, rhs);
    }
    b.build()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solved_instances_satisfy_kkt(seed in any::<u64>()) {
        let qp = random_general_qp(seed);
        let sol = solve_qp(&qp, &settings(), None).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Solved);
        let (prim, dual) = kkt_residuals(&qp, &sol.x, &sol.y, &sol.z);
        prop_assert!(prim <= 1e-5, "primal {}", prim);
        prop_assert!(dual <= 1e-5, "dual {}", dual);
        prop_assert!(sol.primal_residual <= 1e-6 && sol.dual_residual <= 1e-6);
    }

    #[test]
    fn warm_restart_is_a_fixed_point(seed in any::<u64>()) {
        let qp = random_general_qp(seed);
        let sol = solve_qp(&qp, &settings(), None).unwrap();
        prop_assume!(sol.status == QpStatus::Solved);
        let again = solve_qp(&qp, &settings(), Some(&sol.warm_start())).unwrap();
        prop_assert_eq!(again.status, QpStatus::Solved);
        prop_assert!(again.iterations <= 5, "took {}", again.iterations);
    }

    #[test]
    fn l1_extension_adds_absolute_values(seed in any::<u64>(), w in 0.0f64..3.0) {
        let base = random_general_qp(seed);
        let n = base.num_vars();
        let vars: Vec<usize> = (0..n).collect();
        let op = DiffOperator::first_difference(&vars);
        let weights = vec![w; op.len()];
        let ext = l1_to_qp(&weights, &op, &base);
        let sol = solve_qp(&ext.qp, &settings(), None).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Solved);
        let x = &sol.x[..n];
        let direct = base.objective(x)
            + op.apply(x).iter().zip(&weights).map(|(d, w)| w * d.abs()).sum::<f64>();
        prop_assert!((direct - sol.objective).abs() <= 1e-5 * (1.0 + direct.abs()));
    }
}
