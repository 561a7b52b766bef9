use super::*;
use approx::assert_relative_eq;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn linear_instance(
    scenarios: Vec<Vec<f64>>,
    labels: Vec<&str>,
    lower: Vec<f64>,
    upper: Vec<f64>,
) -> DfsoInstance {
    let n = lower.len();
    let pop = GroupedPopulation::new(scenarios, labels.iter().map(|s| s.to_string()).collect())
        .unwrap();
    DfsoInstance::new(
        pop,
        UtilityModel::Linear(AffineUtility::dot(n)),
        EfficiencyModel::unconstrained(CostKind::LinearCost, vec![]),
        FeasibleSet::boxed(lower, upper).unwrap(),
        1.0,
    )
    .unwrap()
}

#[test]
fn population_partition_invariant() {
    let pop = GroupedPopulation::new(
        vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
        vec!["b".into(), "a".into(), "b".into(), "a".into()],
    )
    .unwrap();
    assert_eq!(pop.group_count(), 2);
    assert_eq!(pop.group_names(), &["b".to_string(), "a".to_string()]);
    let mut seen: Vec<usize> = (0..pop.group_count()).flat_map(|a| pop.group(a).to_vec()).collect();
    seen.sort();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    assert_eq!(pop.group(0), &[0, 2]);
    assert_eq!(pop.group(1), &[1, 3]);
}

#[test]
fn eval_utility_examples() {
    // Linear with identity A: f = xi . x.
    let u = UtilityModel::Linear(AffineUtility::dot(2));
    assert_eq!(eval_utility(&u, &[2.0, 5.0], &[1.0, 0.0]).unwrap(), 2.0);

    // max(x, 2 - x) at x = 0.5 -> 1.5.
    let up = AffineUtility { a_matrix: None, a0: vec![0.0], a1: vec![1.0], a2: 0.0 };
    let down = AffineUtility { a_matrix: None, a0: vec![0.0], a1: vec![-1.0], a2: 2.0 };
    let pw = UtilityModel::PiecewiseMax { pieces: vec![up, down] };
    // Scenario contributes nothing here (xi = 0).
    assert_eq!(eval_utility(&pw, &[0.5], &[0.0]).unwrap(), 1.5);
}

#[test]
fn exp_surrogate_evaluates_tangent_max() {
    // Tangents of e^v at v in {0, 1}; inner value 0.5 via xi = 1, x = 0.5.
    let inner = AffineUtility::dot(1);
    let u = UtilityModel::ExpPwl { inner, tangents: vec![0.0, 1.0] };
    // Tangent at 0: 1 + 0.5 = 1.5; tangent at 1: e + e(0.5 - 1) = e/2.
    let expect = (1.0f64 + 0.5).max(std::f64::consts::E / 2.0);
    assert_relative_eq!(eval_utility(&u, &[0.5], &[1.0]).unwrap(), expect, epsilon = 1e-12);
    assert_relative_eq!(expect, 1.5, epsilon = 1e-12);
}

#[test]
fn exp_surrogate_tangency_and_refinement() {
    let inner = AffineUtility::dot(1);
    // Equality at tangent points.
    let u = UtilityModel::ExpPwl { inner: inner.clone(), tangents: vec![-1.0, 0.0, 1.0] };
    for &g in &[-1.0, 0.0, 1.0] {
        let v = eval_utility(&u, &[g], &[1.0]).unwrap();
        assert_relative_eq!(v, g.exp(), epsilon = 1e-12);
        // Tangent lines of a convex function lie below it.
        assert!(v <= g.exp() + 1e-12);
    }
    // Max gap over a fixed grid decreases as tangent count grows.
    let mut last_gap = f64::INFINITY;
    for t_count in [2usize, 4, 8, 16] {
        let tangents: Vec<f64> =
            (0..t_count).map(|k| -1.0 + 2.0 * k as f64 / (t_count - 1) as f64).collect();
        let u = UtilityModel::ExpPwl { inner: inner.clone(), tangents };
        let mut gap = 0.0f64;
        for s in 0..=100 {
            let x = -1.0 + 2.0 * s as f64 / 100.0;
            let surrogate = eval_utility(&u, &[x], &[1.0]).unwrap();
            gap = gap.max(x.exp() - surrogate);
            assert!(surrogate <= x.exp() + 1e-12);
        }
        assert!(gap < last_gap, "gap {gap} should shrink from {last_gap}");
        last_gap = gap;
    }
}

#[test]
fn log_surrogate_errors_on_nonpositive_inner() {
    let inner = AffineUtility::dot(1);
    let u = UtilityModel::LogPwl { inner, tangents: vec![0.5, 1.0] };
    assert!(eval_utility(&u, &[-1.0], &[1.0]).is_err());
    let v = eval_utility(&u, &[1.0], &[1.0]).unwrap();
    assert_relative_eq!(v, 0.0, epsilon = 1e-12);
}

#[test]
fn big_m_interval_examples() {
    // f = x over [-1, 2] -> M = 2.
    let inst = linear_instance(vec![vec![1.0], vec![1.0]], vec!["a", "b"], vec![-1.0], vec![2.0]);
    let bm = compute_big_m(&inst).unwrap();
    assert_eq!(bm.per_scenario, vec![2.0, 2.0]);

    // f = xi . x with xi = (1, -1) over [0,1]^2 -> M = 1.
    let inst = linear_instance(
        vec![vec![1.0, -1.0], vec![1.0, -1.0]],
        vec!["a", "b"],
        vec![0.0, 0.0],
        vec![1.0, 1.0],
    );
    let bm = compute_big_m(&inst).unwrap();
    // Corner-enumeration oracle.
    let mut corner_max = 0.0f64;
    for corner in 0..4u8 {
        let x = [f64::from(corner & 1), f64::from((corner >> 1) & 1)];
        corner_max = corner_max.max((x[0] - x[1]).abs());
    }
    assert_eq!(bm.per_scenario[0], corner_max);
    assert_eq!(corner_max, 1.0);
}

#[test]
fn complementary_big_m_formula() {
    // Two scenarios with M = (1, 3), q = 1, singleton groups: W = (1+3)^1.
    let inst = linear_instance(
        vec![vec![1.0, 0.0], vec![0.0, 3.0]],
        vec!["a", "b"],
        vec![-1.0, -1.0],
        vec![1.0, 1.0],
    );
    let bm = compute_big_m(&inst).unwrap();
    assert_eq!(bm.per_scenario, vec![1.0, 3.0]);
    assert_eq!(bm.w_hat(0, 1), 4.0);
    assert!(!bm.overflow);
}

#[test]
fn big_m_soundness_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scenarios: Vec<Vec<f64>> =
        (0..6).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let labels = vec!["a", "a", "a", "b", "b", "b"];
    let lower = vec![-1.5, 0.0, -0.25];
    let upper = vec![0.5, 2.0, 0.25];
    let inst = linear_instance(scenarios, labels, lower.clone(), upper.clone());
    let bm = compute_big_m(&inst).unwrap();
    for _ in 0..1000 {
        let x: Vec<f64> =
            (0..3).map(|j| rng.random_range(lower[j]..=upper[j])).collect();
        let utils = inst.utilities(&x).unwrap();
        for (i, u) in utils.iter().enumerate() {
            assert!(u.abs() <= bm.per_scenario[i] + 1e-12);
        }
    }
}

#[test]
fn v_star_mse_interpolation() {
    // m = n with invertible design: exact interpolation, V* = 0.
    let scenarios = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
    let pop = GroupedPopulation::new(scenarios, vec!["a".into(), "b".into()]).unwrap();
    let inst = DfsoInstance::new(
        pop,
        UtilityModel::Linear(AffineUtility::dot(2)),
        EfficiencyModel::new(CostKind::SquaredDeviation, vec![1.0, 3.0], 0.1).unwrap(),
        FeasibleSet::boxed(vec![-10.0, -10.0], vec![10.0, 10.0]).unwrap(),
        2.0,
    )
    .unwrap();
    let v = solve_v_star(&inst).unwrap();
    assert!(v.abs() < 1e-9, "V* = {v}");
}

#[test]
fn v_star_knapsack_enumeration() {
    // Items (w, v) = {(1,2), (2,3)}, C = 2: optimum 3 (second item alone).
    let scenarios = vec![vec![2.0, 0.0], vec![0.0, 3.0]];
    let pop = GroupedPopulation::new(scenarios, vec!["a".into(), "b".into()]).unwrap();
    let mut fs = FeasibleSet::binary(2);
    fs.inequalities.push(LinearTerm { coeffs: vec![1.0, 2.0], rhs: 2.0 });
    let inst = DfsoInstance::new(
        pop,
        UtilityModel::Linear(AffineUtility::dot(2)),
        EfficiencyModel::new(CostKind::NegValue, vec![], 0.1).unwrap(),
        fs,
        1.0,
    )
    .unwrap();
    let v = solve_v_star(&inst).unwrap();
    // Mean-cost convention: -best_total / m. Oracle: enumerate 4 subsets.
    let mut best = f64::NEG_INFINITY;
    for mask in 0..4u8 {
        let (x0, x1) = (f64::from(mask & 1), f64::from((mask >> 1) & 1));
        if x0 + 2.0 * x1 <= 2.0 {
            best = best.max(2.0 * x0 + 3.0 * x1);
        }
    }
    assert_eq!(best, 3.0);
    assert_relative_eq!(v, -best / 2.0, epsilon = 1e-9);
}

#[test]
fn v_star_allocation_forced_rates() {
    // l = u: the geometric mean of the forced rates.
    let pop = GroupedPopulation::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let fs = FeasibleSet::boxed(vec![0.2, 0.8], vec![0.2, 0.8]).unwrap();
    let inst = DfsoInstance::new(
        pop,
        UtilityModel::Linear(AffineUtility::dot(2)),
        EfficiencyModel::new(CostKind::NegGeoMeanLog, vec![], 0.1).unwrap(),
        fs,
        2.0,
    )
    .unwrap();
    let v = solve_v_star(&inst).unwrap();
    assert_relative_eq!(v, (0.2f64 * 0.8).sqrt(), epsilon = 1e-7);
}

#[test]
fn efficiency_band_checks() {
    let scenarios = vec![vec![1.0], vec![2.0]];
    let pop = GroupedPopulation::new(scenarios, vec!["a".into(), "b".into()]).unwrap();
    let mut eff = EfficiencyModel::new(CostKind::AbsDeviation, vec![1.0, 2.0], 0.1).unwrap();
    eff.v_star = Some(0.0);
    let inst = DfsoInstance::new(
        pop,
        UtilityModel::Linear(AffineUtility::dot(1)),
        eff,
        FeasibleSet::boxed(vec![-5.0], vec![5.0]).unwrap(),
        1.0,
    )
    .unwrap();
    // x = 1 fits both scenarios exactly: cost 0, inside the collapsed band.
    assert!(efficiency_ok(&inst, &[1.0]).unwrap());
    // Any nonzero cost fails the V* = 0 band (beyond the absolute slack).
    assert!(!efficiency_ok(&inst, &[0.9]).unwrap());
}

#[test]
fn efficiency_boundary_point_within_slack() {
    // V* > 0 and a point with cost exactly (1 + eps) V*.
    let scenarios = vec![vec![1.0], vec![1.0]];
    let pop = GroupedPopulation::new(scenarios, vec!["a".into(), "b".into()]).unwrap();
    let mut eff = EfficiencyModel::new(CostKind::AbsDeviation, vec![0.0, 2.0], 0.1).unwrap();
    // Costs |x| and |x - 2|; V* = 1 at any x in [0, 2].
    eff.v_star = Some(1.0);
    let inst = DfsoInstance::new(
        pop,
        UtilityModel::Linear(AffineUtility::dot(1)),
        eff,
        FeasibleSet::boxed(vec![-5.0], vec![5.0]).unwrap(),
        1.0,
    )
    .unwrap();
    // Cost at x = -0.1 is (0.1 + 2.1)/2 = 1.1 = (1 + 0.1) V*.
    assert!(efficiency_ok(&inst, &[-0.1]).unwrap());
    assert!(!efficiency_ok(&inst, &[-0.2]).unwrap());
}

#[test]
fn instance_rejects_bad_shapes() {
    let pop = GroupedPopulation::new(vec![vec![1.0]], vec!["a".into()]);
    assert!(pop.is_ok());
    // Single group rejected at instance level.
    let single = GroupedPopulation::new(vec![vec![1.0]], vec!["a".into()]).unwrap();
    assert!(DfsoInstance::new(
        single,
        UtilityModel::Linear(AffineUtility::dot(1)),
        EfficiencyModel::unconstrained(CostKind::LinearCost, vec![]),
        FeasibleSet::boxed(vec![0.0], vec![1.0]).unwrap(),
        1.0,
    )
    .is_err());
    // Unbounded box rejected.
    assert!(FeasibleSet::boxed(vec![0.0], vec![f64::INFINITY]).is_err());
}
