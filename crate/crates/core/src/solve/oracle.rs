//! Tiny-instance exact oracle: full enumeration for binary decision spaces,
//! dense grid plus AM polish for low-dimensional continuous ones. The
//! verification harness for formulation certificates and AM quality.

use super::am::{am_solve, efficiency_optimum, AmOptions};
use crate::instance::{efficiency_ok, solve_v_star, DfsoInstance};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub objective: f64,
    pub x: Vec<f64>,
    /// True for exhaustive enumeration; false for the grid+polish heuristic.
    pub certified: bool,
}

/// Exact (binary) or heuristic (continuous) reference optimum.
///
/// `budget` caps the number of candidate evaluations.
pub fn exact_oracle(instance: &DfsoInstance, budget: usize) -> Result<OracleResult> {
    let mut instance = instance.clone();
    if instance.efficiency.v_star.is_none() && instance.efficiency.epsilon.is_finite() {
        instance.efficiency.v_star = Some(solve_v_star(&instance)?);
    }
    let n = instance.n();
    let flags = instance.feasible.integer_flags();
    let all_binary = flags.iter().all(|&b| b)
        && instance.feasible.lower.iter().all(|&l| l >= 0.0)
        && instance.feasible.upper.iter().all(|&u| u <= 1.0);

    if all_binary {
        if n > 20 {
            return Err(Error::unsupported("binary enumeration supports n <= 20"));
        }
        let total = 1usize << n;
        if total > budget {
            return Err(Error::resource(format!(
                "enumeration needs {total} evaluations, budget is {budget}"
            )));
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0..total {
            let x: Vec<f64> = (0..n).map(|j| f64::from((mask >> j) as u32 & 1)).collect();
            if !instance.feasible.contains(&x, 1e-9) || !efficiency_ok(&instance, &x)? {
                continue;
            }
            let v = instance.wd_objective(&x)?;
            if best.as_ref().map(|(b, _)| v < b - 1e-15).unwrap_or(true) {
                best = Some((v, x));
            }
        }
        match best {
            Some((objective, x)) => Ok(OracleResult { objective, x, certified: true }),
            None => Err(Error::infeasible("no feasible binary assignment")),
        }
    } else if flags.iter().all(|&b| !b) {
        if n > 3 {
            return Err(Error::unsupported("continuous grid oracle supports n <= 3"));
        }
        let points_per_dim = 51usize;
        let total = points_per_dim.pow(n as u32);
        if total > budget {
            return Err(Error::resource(format!(
                "grid needs {total} evaluations, budget is {budget}"
            )));
        }
        let fs = &instance.feasible;
        let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            let x: Vec<f64> = (0..n)
                .map(|j| {
                    fs.lower[j]
                        + (fs.upper[j] - fs.lower[j]) * idx[j] as f64
                            / (points_per_dim - 1) as f64
                })
                .collect();
            if instance.feasible.contains(&x, 1e-9) && efficiency_ok(&instance, &x)? {
                let v = instance.wd_objective(&x)?;
                seeds.push((v, x));
            }
            // Advance the odometer.
            let mut j = 0;
            loop {
                if j == n {
                    break;
                }
                idx[j] += 1;
                if idx[j] < points_per_dim {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == n {
                break;
            }
        }
        if seeds.is_empty() {
            return Err(Error::infeasible("no feasible grid point"));
        }
        seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut best = seeds[0].clone();
        let mut starts: Vec<Vec<f64>> =
            seeds.iter().take(4).map(|(_, x)| x.clone()).collect();
        if let Ok(x0) = efficiency_optimum(&instance) {
            starts.push(x0);
        }
        for start in starts {
            if let Ok(report) = am_solve(&instance, Some(start), AmOptions::default()) {
                if report.objective < best.0 {
                    best = (report.objective, report.x);
                }
            }
        }
        Ok(OracleResult { objective: best.0, x: best.1, certified: false })
    } else {
        Err(Error::unsupported(
            "oracle handles all-binary or all-continuous decision spaces",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{
        AffineUtility, CostKind, EfficiencyModel, FeasibleSet, GroupedPopulation, LinearTerm,
        UtilityModel,
    };

    #[test]
    fn binary_enumeration_on_knapsack() {
        // 4 items, weights 1..4, capacity 5.
        let scenarios = vec![
            vec![2.0, 0.0, 0.0, 0.0],
            vec![0.0, 3.0, 0.0, 0.0],
            vec![0.0, 0.0, 4.0, 0.0],
            vec![0.0, 0.0, 0.0, 5.0],
        ];
        let labels = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        let mut fs = FeasibleSet::binary(4);
        fs.inequalities.push(LinearTerm { coeffs: vec![1.0, 2.0, 3.0, 4.0], rhs: 5.0 });
        let inst = DfsoInstance::new(
            GroupedPopulation::new(scenarios, labels).unwrap(),
            UtilityModel::Linear(AffineUtility::dot(4)),
            EfficiencyModel::new(CostKind::NegValue, vec![], 0.5).unwrap(),
            fs,
            1.0,
        )
        .unwrap();
        let res = exact_oracle(&inst, 1 << 20).unwrap();
        assert!(res.certified);
        // Exhaustive double-check.
        let mut inst2 = inst.clone();
        inst2.efficiency.v_star = Some(solve_v_star(&inst2).unwrap());
        let mut best = f64::INFINITY;
        for mask in 0..16usize {
            let x: Vec<f64> = (0..4).map(|j| f64::from((mask >> j) as u32 & 1)).collect();
            if inst2.feasible.contains(&x, 1e-9) && efficiency_ok(&inst2, &x).unwrap() {
                best = best.min(inst2.wd_objective(&x).unwrap());
            }
        }
        assert!((res.objective - best).abs() < 1e-12);
    }

    #[test]
    fn fairness_zero_instance() {
        let scenarios = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let labels = vec!["a".into(), "b".into()];
        let inst = DfsoInstance::new(
            GroupedPopulation::new(scenarios, labels).unwrap(),
            UtilityModel::Linear(AffineUtility::dot(2)),
            EfficiencyModel::unconstrained(CostKind::LinearCost, vec![]),
            FeasibleSet::binary(2),
            2.0,
        )
        .unwrap();
        let res = exact_oracle(&inst, 1000).unwrap();
        assert_eq!(res.objective, 0.0);
    }

    #[test]
    fn continuous_grid_matches_analytic_minimizer() {
        // f = xi x with groups {1} and {3}: WD = (2|x|)^q, minimized at 0.
        let scenarios = vec![vec![1.0], vec![3.0]];
        let labels = vec!["a".into(), "b".into()];
        let inst = DfsoInstance::new(
            GroupedPopulation::new(scenarios, labels).unwrap(),
            UtilityModel::Linear(AffineUtility::dot(1)),
            EfficiencyModel::unconstrained(CostKind::LinearCost, vec![]),
            FeasibleSet::boxed(vec![-1.0], vec![1.0]).unwrap(),
            2.0,
        )
        .unwrap();
        let res = exact_oracle(&inst, 1_000_000).unwrap();
        assert!(!res.certified);
        assert!(res.objective < 1e-9);
        assert!(res.x[0].abs() < 1e-4);
    }

    #[test]
    fn budget_guard() {
        let scenarios = vec![vec![1.0], vec![3.0]];
        let labels = vec!["a".into(), "b".into()];
        let inst = DfsoInstance::new(
            GroupedPopulation::new(scenarios, labels).unwrap(),
            UtilityModel::Linear(AffineUtility::dot(1)),
            EfficiencyModel::unconstrained(CostKind::LinearCost, vec![]),
            FeasibleSet::boxed(vec![-1.0], vec![1.0]).unwrap(),
            2.0,
        )
        .unwrap();
        assert!(matches!(exact_oracle(&inst, 10), Err(Error::Resource(_))));
    }
}
