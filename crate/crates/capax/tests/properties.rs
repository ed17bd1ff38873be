mod common;

use common::*;
use proptest::collection::vec;
use proptest::prelude::*;

fn rows(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(vec(0.01f64..1.0, m), n)
}

fn dmc_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..7, 2usize..7).prop_flat_map(|(n, m)| (rows(n, m), vec(-4.0f64..4.0, m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dmc_gradient_matches_differences((r, lam) in dmc_case(), nu in 0.05f64..1.0) {
        let ch = channel(&r);
        prop_assert!(dmc_gradient(&ch, &lam, nu).is_ok(), "{:?}", dmc_gradient(&ch, &lam, nu));
    }

    #[test]
    fn sandwich_holds((r, lam) in dmc_case(), nu in 1e-3f64..1.0) {
        let ch = channel(&r);
        let res = sandwich(&ch, &lam, nu, None);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn weak_duality_random_pairs((r, lam) in dmc_case(), seed in vec(0.0f64..1.0, 6)) {
        let ch = channel(&r);
        let p = normalize(&seed[..ch.n()].iter().map(|v| v + 1e-3).collect::<Vec<_>>());
        prop_assert!(weak_duality(&ch, &lam, &p, None).is_ok());
        let s: Vec<f64> = (0..ch.n()).map(|i| i as f64).collect();
        let cost = cost_through(&p, &s);
        let res = weak_duality(&ch, &lam, &p, Some(&cost));
        prop_assert!(res.is_ok(), "{:?}", res);
        let res = sandwich(&ch, &lam, 0.1, Some(&cost));
        prop_assert!(res.is_ok(), "{:?}", res);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn poisson_gradient_matches_differences(
        a in 0.5f64..3.0,
        eta in 0.0f64..2.0,
        lam in vec(-2.0f64..4.0, 12),
        nu in 0.01f64..0.5,
    ) {
        let res = poisson_gradient(a, eta, 12, &lam, nu);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn maxent_gradient_matches_differences(
        y in vec(0.05f64..0.6, 1..4),
        z in vec(-3.0f64..3.0, 3),
        u in 0.005f64..0.05,
        eta1 in 0.01f64..1.0,
        eta2 in 1e-4f64..0.1,
    ) {
        let z = &z[..y.len()];
        let res = maxent_gradient(&y, u, z, eta1, eta2);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn finite_maxent_matches_grid(
        pts in vec(0.0f64..3.0, 3..7),
        mass in vec(0.05f64..1.0, 6),
        dim in 1usize..3,
        u in 0.02f64..0.1,
    ) {
        let mut pts = pts;
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        prop_assume!(pts.len() >= 3);
        let p = normalize(&mass[..pts.len()]);
        let y: Vec<f64> = (1..=dim)
            .map(|j| p.iter().zip(&pts).map(|(a, x)| a * x.powi(j as i32)).sum())
            .collect();
        let res = finite_maxent(&pts, &y, u);
        prop_assert!(res.is_ok(), "{:?}", res);
    }
}

#[test]
fn tail_bound_dominates_series_on_grid() {
    for k in [0.25, 0.5, 0.75, 1.0] {
        for m in [16, 24, 32] {
            tail_bound(1.0, 1.0, k, m).unwrap();
            tail_bound(3.0, 0.5, k, m).unwrap();
        }
    }
}
