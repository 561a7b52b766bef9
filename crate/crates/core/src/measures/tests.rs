use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;

fn dist(vals: &[f64]) -> EmpiricalDist {
    EmpiricalDist::new(vals.to_vec()).unwrap()
}

fn rat(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

#[test]
fn quantile_order_statistics() {
    let d = dist(&[1.0, 3.0]);
    assert_eq!(d.quantile(rat(1, 2)).unwrap(), 1.0);
    assert_eq!(d.quantile(rat(1, 1)).unwrap(), 3.0);
    let s = dist(&[5.0]);
    assert_eq!(s.quantile(rat(1, 3)).unwrap(), 5.0);
}

#[test]
fn quantile_rejects_levels_outside_unit_interval() {
    let d = dist(&[1.0, 2.0]);
    assert!(d.quantile(rat(0, 1)).is_err());
    assert!(d.quantile(rat(-1, 2)).is_err());
    assert!(d.quantile(rat(3, 2)).is_err());
}

#[test]
fn empirical_dist_rejects_bad_input() {
    assert!(EmpiricalDist::new(vec![]).is_err());
    assert!(EmpiricalDist::new(vec![1.0, f64::NAN]).is_err());
    assert!(EmpiricalDist::new(vec![f64::INFINITY]).is_err());
}

#[test]
fn merged_grid_identical_sizes() {
    let g = merged_grid(2, 2).unwrap();
    assert_eq!(g.breakpoints(), &[rat(0, 1), rat(1, 2), rat(1, 1)]);
}

#[test]
fn merged_grid_two_three() {
    let g = merged_grid(2, 3).unwrap();
    assert_eq!(
        g.breakpoints(),
        &[rat(0, 1), rat(1, 3), rat(1, 2), rat(2, 3), rat(1, 1)]
    );
    // Cell (1/3, 1/2] sits inside (0, 1/2] for the 2-grid and (1/3, 2/3] for
    // the 3-grid.
    let cell = &g.cells()[1];
    assert_eq!(cell.j_a, 1);
    assert_eq!(cell.j_abar, 2);
}

#[test]
fn merged_grid_rejects_empty_group() {
    assert!(merged_grid(0, 3).is_err());
}

#[test]
fn wasserstein_examples() {
    let a = dist(&[0.0, 1.0]);
    assert_eq!(wasserstein_q_pow(&a, &a, 1.0).unwrap(), 0.0);
    let b = dist(&[0.0, 2.0]);
    assert_relative_eq!(wasserstein_q_pow(&a, &b, 1.0).unwrap(), 0.5, epsilon = 1e-12);
    // Single atoms: transport is forced.
    let c1 = dist(&[1.5]);
    let c2 = dist(&[-2.0]);
    assert_relative_eq!(wasserstein_q_pow(&c1, &c2, 3.0).unwrap(), 3.5f64.powi(3), epsilon = 1e-9);
    assert!(wasserstein_q_pow(&a, &b, 0.5).is_err());
}

#[test]
fn cdf_route_matches_quantile_route() {
    let a = dist(&[0.0, 1.0]);
    let b = dist(&[0.0, 2.0]);
    assert_relative_eq!(wasserstein1_via_cdf(&a, &b).unwrap(), 0.5, epsilon = 1e-12);
    assert_eq!(wasserstein1_via_cdf(&a, &a).unwrap(), 0.0);
    let c = dist(&[0.0]);
    let d = dist(&[3.0]);
    assert_relative_eq!(wasserstein1_via_cdf(&c, &d).unwrap(), 3.0, epsilon = 1e-12);
}

#[test]
fn ksd_examples() {
    let a = dist(&[0.0, 1.0]);
    let b = dist(&[0.0, 2.0]);
    assert_eq!(ksd(&a, &a).unwrap(), 0.0);
    assert_relative_eq!(ksd(&a, &b).unwrap(), 0.5, epsilon = 1e-12);
    // Bernoulli with P_a(0) = 0.6, P_b(0) = 0.5.
    let pa = dist(&[0.0, 0.0, 0.0, 1.0, 1.0]);
    let pb = dist(&[0.0, 0.0, 1.0, 1.0]);
    assert_relative_eq!(ksd(&pa, &pb).unwrap(), 0.1, epsilon = 1e-12);
}

#[test]
fn demographic_parity_examples() {
    let pa = dist(&[0.0, 0.0, 0.0, 1.0, 1.0]);
    let pb = dist(&[0.0, 0.0, 1.0, 1.0]);
    assert_relative_eq!(demographic_parity(&pa, &pb).unwrap(), 0.1, epsilon = 1e-12);
    assert_eq!(demographic_parity(&pa, &pa).unwrap(), 0.0);
    let ones = dist(&[1.0, 1.0]);
    let zeros = dist(&[0.0]);
    assert_eq!(demographic_parity(&zeros, &ones).unwrap(), 1.0);
    let bad = dist(&[0.0, 0.5]);
    assert!(demographic_parity(&bad, &ones).is_err());
}

#[test]
fn ot_bruteforce_examples() {
    let a = dist(&[0.0, 1.0]);
    let b = dist(&[0.0, 2.0]);
    assert_eq!(ot_bruteforce(&a, &a, 2.0).unwrap(), 0.0);
    assert_relative_eq!(ot_bruteforce(&a, &b, 2.0).unwrap(), 0.5, epsilon = 1e-12);
    let c = dist(&[0.0, 10.0]);
    let d = dist(&[5.0]);
    assert_relative_eq!(ot_bruteforce(&c, &d, 1.0).unwrap(), 5.0, epsilon = 1e-12);
}

#[test]
fn ot_bruteforce_size_guard() {
    let big = EmpiricalDist::new((0..101).map(|i| i as f64).collect()).unwrap();
    match ot_bruteforce(&big, &big, 1.0) {
        Err(Error::Resource(_)) => {}
        other => panic!("expected resource error, got {other:?}"),
    }
}

#[test]
fn sandwich_hand_example() {
    let a = dist(&[0.0, 1.0]);
    let b = dist(&[0.0, 2.0]);
    let (lower, upper, coeffs) = ksd_wd_sandwich(&a, &b, 1.0).unwrap();
    assert_relative_eq!(lower, 0.25, epsilon = 1e-12);
    assert_relative_eq!(upper, 0.5, epsilon = 1e-12);
    assert_eq!(coeffs.t1, 0.0);
    assert_eq!(coeffs.t2, 2.0);
    assert_relative_eq!(coeffs.delta_measure, 1.0, epsilon = 1e-12);
    let k = ksd(&a, &b).unwrap();
    assert!(lower <= k + 1e-12 && k <= upper + 1e-12);
}

#[test]
fn sandwich_degenerate_cases() {
    let a = dist(&[1.0, 2.0]);
    let (lo, hi, coeffs) = ksd_wd_sandwich(&a, &a, 2.0).unwrap();
    assert_eq!((lo, hi), (0.0, 0.0));
    assert_eq!(coeffs.eta, 1.0);
    let single = dist(&[3.0]);
    let (lo, hi, _) = ksd_wd_sandwich(&single, &single, 1.0).unwrap();
    assert_eq!((lo, hi), (0.0, 0.0));
}

#[test]
fn wd_fairness_examples() {
    let g1 = dist(&[0.0]);
    let g2 = dist(&[1.0]);
    let g3 = dist(&[3.0]);
    let (v, pair) = wd_fairness(&[g1.clone(), g2, g3], 1.0).unwrap();
    assert_relative_eq!(v, 3.0, epsilon = 1e-12);
    assert_eq!(pair, (0, 2));
    let (v0, _) = wd_fairness(&[g1.clone(), g1.clone()], 2.0).unwrap();
    assert_eq!(v0, 0.0);
    assert!(wd_fairness(std::slice::from_ref(&g1), 1.0).is_err());
}

fn small_dist_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8i32..8i32, 1..9).prop_map(|v| {
        v.into_iter().map(|x| x as f64 / 2.0).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_route_matches_transport_oracle(
        va in small_dist_strategy(),
        vb in small_dist_strategy(),
        q in prop::sample::select(vec![1.0f64, 2.0]),
    ) {
        let a = dist(&va);
        let b = dist(&vb);
        let fast = wasserstein_q_pow(&a, &b, q).unwrap();
        let exact = ot_bruteforce(&a, &b, q).unwrap();
        prop_assert!((fast - exact).abs() <= 1e-9, "fast {fast} vs oracle {exact}");
    }

    #[test]
    fn cdf_identity(va in small_dist_strategy(), vb in small_dist_strategy()) {
        let a = dist(&va);
        let b = dist(&vb);
        let lhs = wasserstein1_via_cdf(&a, &b).unwrap();
        let rhs = wasserstein_q_pow(&a, &b, 1.0).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn dp_recovery_on_bernoulli(
        na in 1usize..9, nb in 1usize..9,
        ka in 0usize..9, kb in 0usize..9,
        q in prop::sample::select(vec![1.0f64, 2.0, 3.0]),
    ) {
        let ka = ka.min(na);
        let kb = kb.min(nb);
        let mk = |n: usize, k: usize| {
            let mut v = vec![0.0; k];
            v.extend(std::iter::repeat_n(1.0, n - k));
            dist(&v)
        };
        let a = mk(na, ka);
        let b = mk(nb, kb);
        let wd = wasserstein_q_pow(&a, &b, q).unwrap();
        let dp = demographic_parity(&a, &b).unwrap();
        prop_assert!((wd - dp).abs() <= 1e-12, "wd {wd} dp {dp}");
    }

    #[test]
    fn sandwich_brackets_ksd(
        va in small_dist_strategy(),
        vb in small_dist_strategy(),
        q in prop::sample::select(vec![1.0f64, 2.0, 3.0]),
    ) {
        let a = dist(&va);
        let b = dist(&vb);
        let (lower, upper, _) = ksd_wd_sandwich(&a, &b, q).unwrap();
        let k = ksd(&a, &b).unwrap();
        prop_assert!(lower <= k + 1e-10, "lower {lower} > ksd {k}");
        prop_assert!(k <= upper + 1e-10, "ksd {k} > upper {upper}");
    }

    #[test]
    fn metric_axioms_at_qth_root(
        va in small_dist_strategy(),
        vb in small_dist_strategy(),
        vc in small_dist_strategy(),
        q in prop::sample::select(vec![1.0f64, 2.0]),
    ) {
        let a = dist(&va);
        let b = dist(&vb);
        let c = dist(&vc);
        let dab = wasserstein_q_pow(&a, &b, q).unwrap().powf(1.0 / q);
        let dba = wasserstein_q_pow(&b, &a, q).unwrap().powf(1.0 / q);
        prop_assert!((dab - dba).abs() <= 1e-9);
        let dac = wasserstein_q_pow(&a, &c, q).unwrap().powf(1.0 / q);
        let dcb = wasserstein_q_pow(&c, &b, q).unwrap().powf(1.0 / q);
        prop_assert!(dab <= dac + dcb + 1e-9);
    }

    #[test]
    fn optimal_plan_is_comonotone_for_strictly_convex_cost(
        seed_a in prop::collection::vec(0u32..1_000_000, 1..8),
        seed_b in prop::collection::vec(0u32..1_000_000, 1..8),
    ) {
        // Distinct values by construction; q = 2 makes the optimum unique.
        let mut va: Vec<f64> = seed_a.iter().enumerate()
            .map(|(i, &s)| s as f64 / 1e6 + i as f64).collect();
        let mut vb: Vec<f64> = seed_b.iter().enumerate()
            .map(|(i, &s)| s as f64 / 1e6 + i as f64 + 0.5).collect();
        va.dedup();
        vb.dedup();
        let a = dist(&va);
        let b = dist(&vb);
        let sol = ot_bruteforce_plan(&a, &b, 2.0).unwrap();
        prop_assert!(sol.is_comonotone());
    }
}
