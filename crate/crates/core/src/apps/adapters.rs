//! Problem adapters: fair regression, fair knapsack, and fair vaccine
//! allocation, mapped onto DFSO instances.

use crate::instance::{
    solve_v_star, AffineUtility, CostKind, DfsoInstance, EfficiencyModel, FeasibleSet,
    GroupedPopulation, LinearTerm, UtilityModel,
};
use crate::solve::kernel::{solve_convex, ConvexRow, LinearRow, RowSense};
use crate::{Error, Result};

/// Regression instance: linear utility `f = xi . x` with an MAE or MSE band.
pub fn regression_adapter(
    population: GroupedPopulation,
    responses: Vec<f64>,
    mse: bool,
    epsilon: f64,
    q: f64,
) -> Result<DfsoInstance> {
    if responses.len() != population.len() {
        return Err(Error::input("regression needs one response per scenario"));
    }
    let kappa = population.dim();
    let kind = if mse { CostKind::SquaredDeviation } else { CostKind::AbsDeviation };
    let mut eff = EfficiencyModel::new(kind, responses, 0.0)?;
    eff.epsilon = epsilon;
    let mut inst = DfsoInstance::new(
        population,
        UtilityModel::Linear(AffineUtility::dot(kappa)),
        eff,
        FeasibleSet::boxed(vec![-20.0; kappa], vec![20.0; kappa])?,
        q,
    )?;
    if inst.efficiency.epsilon.is_finite() {
        inst.efficiency.v_star = Some(solve_v_star(&inst)?);
    }
    Ok(inst)
}

/// Knapsack instance: binary selection, capacity `C = fraction * sum w`,
/// negative-total-value efficiency with `V*` from the dynamic program.
pub fn knapsack_adapter(
    population: GroupedPopulation,
    weights: &[u64],
    capacity_fraction: f64,
    epsilon: f64,
    q: f64,
) -> Result<DfsoInstance> {
    let m = population.len();
    if weights.len() != m {
        return Err(Error::input("one weight per item required"));
    }
    let total: u64 = weights.iter().sum();
    let capacity = (capacity_fraction * total as f64).floor();
    if weights.iter().any(|&w| w as f64 > capacity) && capacity < 1.0 {
        return Err(Error::infeasible("capacity below the smallest weight"));
    }
    let mut fs = FeasibleSet::binary(m);
    fs.inequalities.push(LinearTerm {
        coeffs: weights.iter().map(|&w| w as f64).collect(),
        rhs: capacity,
    });
    let mut eff = EfficiencyModel::new(CostKind::NegValue, vec![], 0.0)?;
    eff.epsilon = epsilon;
    let mut inst = DfsoInstance::new(
        population,
        UtilityModel::Linear(AffineUtility::dot(m)),
        eff,
        fs,
        q,
    )?;
    if inst.efficiency.epsilon.is_finite() {
        inst.efficiency.v_star = Some(solve_v_star(&inst)?);
    }
    Ok(inst)
}

/// One county row of the allocation problem.
#[derive(Debug, Clone)]
pub struct County {
    pub name: String,
    pub population: u64,
    pub seniors: u64,
}

/// Urban/rural split threshold on the county population.
pub const URBAN_THRESHOLD: u64 = 50_000;

/// Allocation instance over coverage rates: the utility of county `i` is its
/// rate `x_i`, bounds are senior-share proportional, the budget row caps the
/// allocated doses, and efficiency is the geometric mean of the rates with a
/// multiplicative `(1 - eps)` band.
///
/// The per-county bounds scale the senior-proportional dose share by the
/// county population so they are coverage rates:
/// `l_i = 0.8 s_i T / (sum s * p_i)` and `u_i = 2 l_i / 0.8`.
pub fn allocation_adapter(
    counties: &[County],
    budget_fraction: f64,
    epsilon: f64,
    q: f64,
) -> Result<DfsoInstance> {
    let m = counties.len();
    if m < 2 {
        return Err(Error::input("allocation needs at least two counties"));
    }
    let total_pop: f64 = counties.iter().map(|c| c.population as f64).sum();
    let total_seniors: f64 = counties.iter().map(|c| c.seniors as f64).sum();
    if total_seniors <= 0.0 {
        return Err(Error::input("senior counts must not all be zero"));
    }
    let budget = budget_fraction * total_pop;
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for c in counties {
        let share = c.seniors as f64 * budget / (total_seniors * c.population as f64);
        let l = 0.8 * share;
        let u = (2.0 * share).min(1.0);
        if l <= 0.0 || l > u {
            return Err(Error::input(format!("county {} has a degenerate rate window", c.name)));
        }
        lower.push(l);
        upper.push(u);
    }
    let committed: f64 = counties
        .iter()
        .zip(&lower)
        .map(|(c, l)| c.population as f64 * l)
        .sum();
    if committed > budget + 1e-9 {
        return Err(Error::infeasible(format!(
            "minimum coverage needs {committed:.0} doses, budget is {budget:.0}"
        )));
    }
    let mut fs = FeasibleSet::boxed(lower, upper)?;
    fs.inequalities.push(LinearTerm {
        coeffs: counties.iter().map(|c| c.population as f64).collect(),
        rhs: budget,
    });
    let mut scenarios = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for (i, c) in counties.iter().enumerate() {
        let mut xi = vec![0.0; m];
        xi[i] = 1.0;
        scenarios.push(xi);
        labels.push(if c.population >= URBAN_THRESHOLD {
            "urban".to_string()
        } else {
            "rural".to_string()
        });
    }
    let mut eff = EfficiencyModel::new(CostKind::NegGeoMeanLog, vec![], 0.0)?;
    eff.epsilon = epsilon;
    let mut inst = DfsoInstance::new(
        GroupedPopulation::new(scenarios, labels)?,
        UtilityModel::Linear(AffineUtility::dot(m)),
        eff,
        fs,
        q,
    )?;
    inst.efficiency.v_star = Some(solve_v_star(&inst)?);
    Ok(inst)
}

/// The max-min group-fairness comparator for the allocation problem:
/// maximizes the smallest group geometric mean subject to the same budget,
/// bounds, and `(1 - eps)` efficiency band. Returns the rates.
pub fn allocation_max_min(instance: &DfsoInstance) -> Result<Vec<f64>> {
    if instance.efficiency.kind != CostKind::NegGeoMeanLog {
        return Err(Error::unsupported("max-min comparator applies to allocation instances"));
    }
    let v_star = instance
        .efficiency
        .v_star
        .ok_or_else(|| Error::domain("solve V* before the comparator"))?;
    let n = instance.n();
    let mut prog = crate::instance::base_program(&instance.feasible)?;
    // tau <= mean log rate of each group; maximize tau.
    let log_lo = instance.feasible.lower.iter().map(|l| l.ln()).fold(f64::INFINITY, f64::min);
    let log_hi = instance.feasible.upper.iter().map(|u| u.ln()).fold(f64::NEG_INFINITY, f64::max);
    let tau = prog.add_var(log_lo - 1.0, log_hi + 1.0, -1.0);
    for a in 0..instance.population.group_count() {
        let members = instance.population.group(a);
        let ma = members.len() as f64;
        prog.convex.push(ConvexRow::NegLogSum {
            terms: members.iter().map(|&i| (i, 1.0 / ma)).collect(),
            lin: vec![(tau, 1.0)],
            constant: 0.0,
        });
    }
    // Efficiency band in log space.
    if instance.efficiency.epsilon.is_finite() {
        let floor = (1.0 - instance.efficiency.epsilon) * v_star;
        if floor > 0.0 {
            prog.convex.push(ConvexRow::NegLogSum {
                terms: (0..n).map(|j| (j, 1.0)).collect(),
                lin: vec![],
                constant: n as f64 * floor.ln(),
            });
        }
    }
    let sol = solve_convex(&prog)?;
    Ok(sol.x[..n].to_vec())
}

/// Small helper used by the experiment runner: an extra linear row stated on
/// the decision variables.
pub fn extra_row(prog_coeffs: Vec<(usize, f64)>, rhs: f64) -> LinearRow {
    LinearRow { coeffs: prog_coeffs, sense: RowSense::Le, rhs }
}
