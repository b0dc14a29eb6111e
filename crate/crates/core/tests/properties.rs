mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;
use inertia_alloc::case::{export_case, parse_case};
use inertia_alloc::freq::{aggregate, nadir_response, rocof, AggregateParams};
use inertia_alloc::grid::{kron_reduce, linearize};
use inertia_alloc::lp::{solve_lp, LinearProgram, LpStatus};
use inertia_alloc::modal::{damping_ratio, decompose};

fn params() -> impl Strategy<Value = AggregateParams<f64>> {
    (
        1.0..20.0f64,
        0.0..30.0f64,
        2.0..40.0f64,
        0.0..0.6f64,
        0.5..10.0f64,
        0.01..0.3f64,
    )
        .prop_map(|(m, d, r_g, f_g, t, dp)| AggregateParams {
            m,
            d,
            r_g,
            f_g,
            t,
            f0: 50.0,
            dp,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nadir_scales_with_the_disturbance(p in params(), k in 0.1..5.0f64) {
        let a = nadir_response(&p).unwrap();
        let b = nadir_response(&AggregateParams { dp: p.dp * k, ..p }).unwrap();
        prop_assert!((b.nadir - k * a.nadir).abs() <= 1e-9 * b.nadir.abs().max(1e-12));
        prop_assert!((b.t_m - a.t_m).abs() <= 1e-9 * a.t_m.max(1.0));
        prop_assert!(a.nadir < 0.0);
        // The deepest point lies beyond the steady-state deviation.
        prop_assert!(a.nadir <= p.steady_state() * (1.0 + 1e-12));
    }

    #[test]
    fn rocof_halves_with_doubled_inertia(p in params()) {
        let a = rocof(&p).unwrap();
        let b = rocof(&AggregateParams { m: 2.0 * p.m, ..p }).unwrap();
        prop_assert!((a - 2.0 * b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn kron_reduction_of_a_path_keeps_a_laplacian(b in proptest::collection::vec(0.1..50.0f64, 2..8), cut in 0usize..6) {
        let n = b.len() + 1;
        let mut y = DMatrix::<f64>::zeros(n, n);
        for (i, &bi) in b.iter().enumerate() {
            y[(i, i)] += bi;
            y[(i + 1, i + 1)] += bi;
            y[(i, i + 1)] -= bi;
            y[(i + 1, i)] -= bi;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i == 0 || i == n - 1 || i % (cut + 2) == 0).collect();
        let r = kron_reduce(&y, &keep).unwrap().reduced;
        for i in 0..r.nrows() {
            prop_assert!(r.row(i).sum().abs() <= 1e-9 * b.iter().sum::<f64>());
            for j in 0..r.ncols() {
                prop_assert!((r[(i, j)] - r[(j, i)]).abs() <= 1e-12 * r[(i, i)].abs().max(1.0));
            }
        }
        // Series susceptance between the two ends survives the reduction.
        if keep == vec![0, n - 1] {
            let series = 1.0 / b.iter().map(|x| 1.0 / x).sum::<f64>();
            prop_assert!((r[(0, 1)] + series).abs() <= 1e-9 * series);
        }
    }

    #[test]
    fn lp_solutions_are_feasible_and_bounded(
        costs in proptest::collection::vec(-5.0..5.0f64, 3),
        rows in proptest::collection::vec(proptest::collection::vec(-3.0..3.0f64, 3), 1..5),
        rhs in proptest::collection::vec(0.0..10.0f64, 5),
    ) {
        let mut lp = LinearProgram::<f64>::new();
        let x: Vec<usize> = costs.iter().enumerate().map(|(i, &c)| lp.add_var(format!("x{i}"), c, Some(0.0), Some(4.0))).collect();
        for (k, r) in rows.iter().enumerate() {
            let terms: Vec<(usize, f64)> = x.iter().copied().zip(r.iter().copied()).collect();
            lp.add_le(format!("r{k}"), &terms, rhs[k]);
        }
        // Origin is feasible, so the box keeps the program bounded.
        let sol = solve_lp(&lp).unwrap();
        prop_assert_eq!(sol.status, LpStatus::Optimal);
        for (k, r) in rows.iter().enumerate() {
            let lhs: f64 = r.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
            prop_assert!(lhs <= rhs[k] + 1e-9);
        }
        prop_assert!(sol.x.iter().all(|&v| (-1e-9..=4.0 + 1e-9).contains(&v)));
        prop_assert!(sol.objective <= 1e-12);
    }

    #[test]
    fn random_allocations_give_consistent_models(seed in proptest::collection::vec(0.0..1.0f64, 8)) {
        let c = load(LOW);
        let mut a = c.initial_allocation();
        for (k, j) in c.grid.controllable().into_iter().enumerate() {
            let b = a.bounds[j].unwrap();
            a.m[j] = b.m_lo + seed[2 * k] * (b.m_hi - b.m_lo);
            a.d[j] = b.d_lo + seed[2 * k + 1] * (b.d_hi - b.d_lo);
        }
        let model = linearize(&c.grid, &a).unwrap();
        let modes = decompose(&model).unwrap();
        for (l, &z) in modes.lambdas.iter().zip(&modes.zetas) {
            prop_assert_eq!(z, damping_ratio(*l));
            prop_assert!((-1.0..=1.0).contains(&z));
        }
        let agg = aggregate(&c.grid, &a).unwrap();
        prop_assert!(agg.m > 0.0 && agg.d > 0.0);
    }
}

#[test]
fn exported_cases_load_back_unchanged() {
    for name in [LOW, NONE] {
        let c = load(name);
        let again = parse_case(&export_case(&c)).unwrap();
        assert_eq!(c, again);
    }
}
