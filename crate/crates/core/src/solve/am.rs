//! The alternating-minimization algorithm: fix the comonotonic matching at
//! the incumbent, solve the resulting convex program in `x`, re-match,
//! repeat. The fixed-matching objective upper-bounds the true fairness
//! objective (the matching is an admissible coupling for every `x`), and it
//! is tight at the incumbent, so the exact objective trace is non-increasing;
//! a safeguard stops the loop if kernel noise ever breaks that.

use super::kernel::{Affine, ConvexProgram, ConvexRow};
use super::{IterRecord, MatchingPlan, PairMatching, SolveReport, SolveStatus};
use crate::instance::{
    band_threshold, base_program, compute_big_m, efficiency_ok, solve_v_star, CostKind,
    DfsoInstance, PieceCombiner,
};
use crate::{Error, Result};
use num_traits::ToPrimitive;
use std::time::Instant;

/// Options for the AM loop.
#[derive(Debug, Clone, Copy)]
pub struct AmOptions {
    /// Relative convergence threshold on successive objectives.
    pub tol: f64,
    pub max_iter: usize,
    /// Node budget for integral subproblems.
    pub node_limit: usize,
}

impl Default for AmOptions {
    fn default() -> Self {
        AmOptions { tol: 1e-6, max_iter: 200, node_limit: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub x: Vec<f64>,
    /// Fixed-matching objective value at `x`.
    pub nu: f64,
    /// False when an integral subproblem hit its node budget.
    pub certified: bool,
}

/// Matches every merged-grid cell of every group pair with the scenarios
/// realizing the group quantiles at the cell's right endpoint, at `x`.
pub fn comonotonic_matching(instance: &DfsoInstance, x: &[f64]) -> Result<MatchingPlan> {
    let utils = instance.utilities(x)?;
    let mut pairs = Vec::new();
    let groups = instance.population.group_count();
    for a in 0..groups {
        for b in a + 1..groups {
            let order = |g: usize| -> Vec<usize> {
                let members = instance.population.group(g);
                let mut idx: Vec<usize> = members.to_vec();
                idx.sort_by(|&p, &q| {
                    utils[p].partial_cmp(&utils[q]).unwrap().then(p.cmp(&q))
                });
                idx
            };
            let sorted_a = order(a);
            let sorted_b = order(b);
            let grid =
                crate::measures::merged_grid(sorted_a.len(), sorted_b.len())?;
            let cells = grid
                .cells()
                .iter()
                .map(|cell| (cell.width, sorted_a[cell.j_a - 1], sorted_b[cell.j_abar - 1]))
                .collect();
            pairs.push(PairMatching { a, b, cells });
        }
    }
    Ok(MatchingPlan { reference_x: x.to_vec(), pairs })
}

/// Affine form of `f(., xi_i)` with piecewise utilities pinned to the piece
/// active at the plan's reference decision.
fn fixed_piece_affine(
    instance: &DfsoInstance,
    reference_x: &[f64],
    scenario: usize,
) -> (Vec<f64>, f64) {
    let xi = instance.population.scenario(scenario);
    let (combiner, pieces) = instance.utility.pieces(xi);
    match combiner {
        PieceCombiner::Single => pieces.into_iter().next().expect("one piece"),
        PieceCombiner::Max | PieceCombiner::Min => {
            let vals: Vec<f64> = pieces
                .iter()
                .map(|(c, d)| {
                    c.iter().zip(reference_x).map(|(cj, xj)| cj * xj).sum::<f64>() + d
                })
                .collect();
            let active = match combiner {
                PieceCombiner::Max => {
                    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    vals.iter().position(|&v| v >= best - 1e-12).unwrap()
                }
                _ => {
                    let best = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    vals.iter().position(|&v| v <= best + 1e-12).unwrap()
                }
            };
            pieces.into_iter().nth(active).expect("active piece")
        }
    }
}

/// Appends the efficiency-band rows to a kernel program.
pub(crate) fn append_band(prog: &mut ConvexProgram, instance: &DfsoInstance) -> Result<()> {
    if instance.efficiency.epsilon.is_infinite() {
        return Ok(());
    }
    let m = instance.population.len() as f64;
    match instance.efficiency.kind {
        CostKind::LinearCost | CostKind::NegValue => {
            let threshold = band_threshold(&instance.efficiency)?;
            let sign = if instance.efficiency.kind == CostKind::NegValue { -1.0 } else { 1.0 };
            let mut coeffs = vec![0.0; instance.n()];
            for s in instance.population.scenarios() {
                for (j, &v) in s.iter().enumerate() {
                    coeffs[j] += sign * v / m;
                }
            }
            prog.linear.push(super::kernel::LinearRow {
                coeffs: crate::instance::sparse(&coeffs),
                sense: super::kernel::RowSense::Le,
                rhs: threshold,
            });
        }
        CostKind::AbsDeviation => {
            let threshold = band_threshold(&instance.efficiency)?;
            let terms: Vec<Affine> = instance
                .population
                .scenarios()
                .iter()
                .zip(&instance.efficiency.responses)
                .map(|(s, y)| Affine {
                    coeffs: crate::instance::sparse(
                        &s.iter().map(|v| v / m).collect::<Vec<_>>(),
                    ),
                    constant: -y / m,
                })
                .collect();
            prog.convex.push(ConvexRow::AbsSum { terms, lin: vec![], constant: -threshold });
        }
        CostKind::SquaredDeviation => {
            let threshold = band_threshold(&instance.efficiency)?;
            let root = (1.0 / m).sqrt();
            let terms: Vec<Affine> = instance
                .population
                .scenarios()
                .iter()
                .zip(&instance.efficiency.responses)
                .map(|(s, y)| Affine {
                    coeffs: crate::instance::sparse(
                        &s.iter().map(|v| v * root).collect::<Vec<_>>(),
                    ),
                    constant: -y * root,
                })
                .collect();
            prog.convex.push(ConvexRow::QuadSum { terms, lin: vec![], constant: -threshold });
        }
        CostKind::NegGeoMeanLog => {
            let v = instance
                .efficiency
                .v_star
                .ok_or_else(|| Error::domain("V* must be solved first"))?;
            let floor = (1.0 - instance.efficiency.epsilon) * v;
            if floor > 0.0 {
                // sum log x_i >= m log floor.
                prog.convex.push(ConvexRow::NegLogSum {
                    terms: (0..instance.n()).map(|j| (j, 1.0)).collect(),
                    lin: vec![],
                    constant: m * floor.ln(),
                });
            }
        }
    }
    Ok(())
}

fn nu_bound(instance: &DfsoInstance) -> Result<f64> {
    let bm = compute_big_m(instance)?;
    let groups = instance.population.group_count();
    let mut worst = 0.0f64;
    for a in 0..groups {
        for b in a + 1..groups {
            let ma = bm.group_sorted_asc[a].last().copied().unwrap_or(0.0);
            let mb = bm.group_sorted_asc[b].last().copied().unwrap_or(0.0);
            worst = worst.max(crate::measures::pow_q(ma + mb, instance.q));
        }
    }
    Ok(worst + 1.0)
}

/// Minimizes the fixed-matching objective over the feasible set and band.
pub fn am_subproblem(instance: &DfsoInstance, plan: &MatchingPlan) -> Result<SubproblemResult> {
    if instance.q != 1.0 && instance.q != 2.0 {
        return Err(Error::unsupported("AM subproblems support q in {1, 2}"));
    }
    let mut prog = base_program(&instance.feasible)?;
    append_band(&mut prog, instance)?;
    let nu = prog.add_var(0.0, nu_bound(instance)?, 1.0);

    for pair in &plan.pairs {
        let mut terms = Vec::with_capacity(pair.cells.len());
        for &(width, sa, sb) in &pair.cells {
            let w = width.to_f64().expect("small rational");
            let (ca, da) = fixed_piece_affine(instance, &plan.reference_x, sa);
            let (cb, db) = fixed_piece_affine(instance, &plan.reference_x, sb);
            let scale = if instance.q == 1.0 { w } else { w.sqrt() };
            let coeffs: Vec<(usize, f64)> = (0..instance.n())
                .filter_map(|j| {
                    let c = (ca[j] - cb[j]) * scale;
                    if c != 0.0 {
                        Some((j, c))
                    } else {
                        None
                    }
                })
                .collect();
            terms.push(Affine { coeffs, constant: (da - db) * scale });
        }
        let row = if instance.q == 1.0 {
            ConvexRow::AbsSum { terms, lin: vec![(nu, -1.0)], constant: 0.0 }
        } else {
            ConvexRow::QuadSum { terms, lin: vec![(nu, -1.0)], constant: 0.0 }
        };
        prog.convex.push(row);
    }

    let flags = {
        let mut f = instance.feasible.integer_flags();
        f.resize(prog.n, false);
        f
    };
    if flags.iter().any(|&b| b) {
        let sol = super::bb::solve_mixed(&prog, &flags, 100_000)?;
        Ok(SubproblemResult {
            x: sol.x[..instance.n()].to_vec(),
            nu: sol.objective,
            certified: sol.certified,
        })
    } else {
        let sol = super::kernel::solve_convex(&prog)?;
        Ok(SubproblemResult {
            x: sol.x[..instance.n()].to_vec(),
            nu: sol.objective,
            certified: sol.status == super::kernel::KernelStatus::Optimal,
        })
    }
}

/// Cost-optimal decision (the default AM start): minimizes the mean cost
/// over the feasible set, ignoring fairness.
pub fn efficiency_optimum(instance: &DfsoInstance) -> Result<Vec<f64>> {
    let m = instance.population.len() as f64;
    let mut prog = base_program(&instance.feasible)?;
    match instance.efficiency.kind {
        CostKind::LinearCost | CostKind::NegValue => {
            let sign = if instance.efficiency.kind == CostKind::NegValue { -1.0 } else { 1.0 };
            for s in instance.population.scenarios() {
                for (j, &v) in s.iter().enumerate() {
                    prog.objective[j] += sign * v / m;
                }
            }
        }
        CostKind::AbsDeviation | CostKind::SquaredDeviation => {
            let bound = {
                let mut total = 1.0;
                for (i, y) in instance.efficiency.responses.iter().enumerate() {
                    let xi = instance.population.scenario(i);
                    let (lo, hi) = crate::instance::affine_range(
                        xi,
                        -y,
                        &instance.feasible.lower,
                        &instance.feasible.upper,
                    );
                    let mag = lo.abs().max(hi.abs());
                    total += if instance.efficiency.kind == CostKind::SquaredDeviation {
                        mag * mag / m
                    } else {
                        mag / m
                    };
                }
                total
            };
            let t = prog.add_var(0.0, bound, 1.0);
            let quadratic = instance.efficiency.kind == CostKind::SquaredDeviation;
            let scale = if quadratic { (1.0 / m).sqrt() } else { 1.0 / m };
            let terms: Vec<Affine> = instance
                .population
                .scenarios()
                .iter()
                .zip(&instance.efficiency.responses)
                .map(|(s, y)| Affine {
                    coeffs: crate::instance::sparse(
                        &s.iter().map(|v| v * scale).collect::<Vec<_>>(),
                    ),
                    constant: -y * scale,
                })
                .collect();
            let row = if quadratic {
                ConvexRow::QuadSum { terms, lin: vec![(t, -1.0)], constant: 0.0 }
            } else {
                ConvexRow::AbsSum { terms, lin: vec![(t, -1.0)], constant: 0.0 }
            };
            prog.convex.push(row);
        }
        CostKind::NegGeoMeanLog => {
            if instance.feasible.lower.iter().any(|&l| l <= 0.0) {
                return Err(Error::domain("allocation rates need positive lower bounds"));
            }
            let n = instance.n();
            let lo = instance.feasible.lower.iter().map(|l| l.ln()).sum::<f64>() / n as f64;
            let hi = instance.feasible.upper.iter().map(|u| u.ln()).sum::<f64>() / n as f64;
            let span = lo.abs().max(hi.abs()) + 1.0;
            let t = prog.add_var(-span, span, 1.0);
            prog.convex.push(ConvexRow::NegLogSum {
                terms: (0..n).map(|j| (j, 1.0 / n as f64)).collect(),
                lin: vec![(t, -1.0)],
                constant: 0.0,
            });
        }
    }
    let flags = {
        let mut f = instance.feasible.integer_flags();
        f.resize(prog.n, false);
        f
    };
    let x = if flags.iter().any(|&b| b) {
        super::bb::solve_mixed(&prog, &flags, 100_000)?.x
    } else {
        super::kernel::solve_convex(&prog)?.x
    };
    Ok(x[..instance.n()].to_vec())
}

/// Runs the AM loop from `x0` (or the cost-optimal start when `None`).
///
/// `V*` is solved and cached on a copy of the instance if missing.
pub fn am_solve(
    instance: &DfsoInstance,
    x0: Option<Vec<f64>>,
    opts: AmOptions,
) -> Result<SolveReport> {
    let mut instance = instance.clone();
    if instance.efficiency.v_star.is_none() && instance.efficiency.epsilon.is_finite() {
        instance.efficiency.v_star = Some(solve_v_star(&instance)?);
    }
    let start = Instant::now();
    let x0 = match x0 {
        Some(x) => x,
        None => efficiency_optimum(&instance)?,
    };
    if !instance.feasible.contains(&x0, 1e-6) || !efficiency_ok(&instance, &x0)? {
        return Err(Error::infeasible("AM start point violates the feasible set or band"));
    }

    let mut x = x0;
    let mut best = instance.wd_objective(&x)?;
    let mut trace = vec![IterRecord {
        iter: 0,
        objective: best,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }];
    let mut status = SolveStatus::IterationLimit;
    for iter in 1..=opts.max_iter {
        let plan = comonotonic_matching(&instance, &x)?;
        let sub = match am_subproblem(&instance, &plan) {
            Ok(s) => s,
            Err(Error::Infeasible(msg)) => return Err(Error::Infeasible(msg)),
            Err(e) => return Err(e),
        };
        let candidate = instance.wd_objective(&sub.x)?;
        if candidate > best + 1e-12 {
            // Kernel noise pushed the exact objective up; keep the incumbent.
            status = SolveStatus::Converged;
            break;
        }
        let improvement = best - candidate;
        x = sub.x;
        best = candidate;
        trace.push(IterRecord {
            iter,
            objective: best,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if improvement < opts.tol * best.abs().max(1.0) {
            status = SolveStatus::Converged;
            break;
        }
    }

    let mut report = SolveReport::scores(&instance, x)?;
    report.trace = trace;
    report.status = status;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{
        AffineUtility, EfficiencyModel, FeasibleSet, GroupedPopulation, LinearTerm, UtilityModel,
    };
    use approx::assert_relative_eq;

    fn scalar_instance(values_a: &[f64], values_b: &[f64], q: f64) -> DfsoInstance {
        let mut scenarios = Vec::new();
        let mut labels = Vec::new();
        for &v in values_a {
            scenarios.push(vec![v]);
            labels.push("a".to_string());
        }
        for &v in values_b {
            scenarios.push(vec![v]);
            labels.push("b".to_string());
        }
        DfsoInstance::new(
            GroupedPopulation::new(scenarios, labels).unwrap(),
            UtilityModel::Linear(AffineUtility::dot(1)),
            EfficiencyModel::unconstrained(CostKind::LinearCost, vec![]),
            FeasibleSet::boxed(vec![-1.0], vec![1.0]).unwrap(),
            q,
        )
        .unwrap()
    }

    #[test]
    fn matching_pairs_sorted_scenarios() {
        // Group a holds (3, 1), group b holds (2, 4) at x = 1: cells (0, 1/2]
        // and (1/2, 1] pair (1, 2) and (3, 4), i.e. scenarios (1, 2) and (0, 3).
        let inst = scalar_instance(&[3.0, 1.0], &[2.0, 4.0], 1.0);
        let plan = comonotonic_matching(&inst, &[1.0]).unwrap();
        let cells = &plan.pairs[0].cells;
        assert_eq!(cells.len(), 2);
        assert_eq!((cells[0].1, cells[0].2), (1, 2));
        assert_eq!((cells[1].1, cells[1].2), (0, 3));
    }

    #[test]
    fn matching_cost_equals_wasserstein() {
        let inst = scalar_instance(&[3.0, 1.0, 0.5], &[2.0, 4.0], 2.0);
        let x = vec![0.8];
        let plan = comonotonic_matching(&inst, &x).unwrap();
        let utils = inst.utilities(&x).unwrap();
        let mut cost = 0.0;
        for &(width, sa, sb) in &plan.pairs[0].cells {
            cost += width.to_f64().unwrap()
                * crate::measures::pow_q(utils[sa] - utils[sb], 2.0);
        }
        assert_relative_eq!(cost, inst.wd_objective(&x).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn am_converges_to_zero_on_symmetric_instance() {
        // Identical groups: fairness is zero everywhere.
        let inst = scalar_instance(&[1.0, 2.0], &[1.0, 2.0], 2.0);
        let report = am_solve(&inst, None, AmOptions::default()).unwrap();
        assert!(report.objective < 1e-12);
        assert!(report.trace.len() <= 3);
        assert_eq!(report.status, SolveStatus::Converged);
    }

    #[test]
    fn am_finds_fairness_zero_crossing() {
        // Groups {1} and {2}: f = xi x, gap is |x|; optimum x = 0.
        let inst = scalar_instance(&[1.0], &[2.0], 2.0);
        let report = am_solve(&inst, None, AmOptions::default()).unwrap();
        // Kernel feasibility tolerance bounds how flat the quadratic can
        // get around the vertex.
        assert!(report.objective < 1e-8, "objective {}", report.objective);
        assert!(report.x[0].abs() < 1e-4);
    }

    #[test]
    fn am_trace_non_increasing() {
        let inst = scalar_instance(&[0.5, 1.5, 3.0], &[1.0, 2.0], 2.0);
        let report = am_solve(&inst, Some(vec![1.0]), AmOptions::default()).unwrap();
        for w in report.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9);
        }
    }

    #[test]
    fn am_rejects_infeasible_start() {
        let inst = scalar_instance(&[1.0], &[2.0], 2.0);
        assert!(matches!(
            am_solve(&inst, Some(vec![5.0]), AmOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn subproblem_respects_integrality() {
        // Knapsack-like: two binary items, fairness between their values.
        let scenarios = vec![vec![2.0, 0.0], vec![0.0, 3.0]];
        let pop =
            GroupedPopulation::new(scenarios, vec!["a".into(), "b".into()]).unwrap();
        let mut fs = FeasibleSet::binary(2);
        fs.inequalities.push(LinearTerm { coeffs: vec![1.0, 1.0], rhs: 2.0 });
        let inst = DfsoInstance::new(
            pop,
            UtilityModel::Linear(AffineUtility::dot(2)),
            EfficiencyModel::unconstrained(CostKind::NegValue, vec![]),
            fs,
            1.0,
        )
        .unwrap();
        let plan = comonotonic_matching(&inst, &[1.0, 1.0]).unwrap();
        let sub = am_subproblem(&inst, &plan).unwrap();
        assert!(sub.certified);
        for v in &sub.x {
            assert!((v - v.round()).abs() < 1e-9);
        }
        // Exhaustive check over the four assignments.
        let mut best = f64::INFINITY;
        for mask in 0..4u8 {
            let x = [f64::from(mask & 1), f64::from((mask >> 1) & 1)];
            if x[0] + x[1] <= 2.0 {
                let utils = [2.0 * x[0], 3.0 * x[1]];
                let mut cost = 0.0;
                for &(w, sa, sb) in &plan.pairs[0].cells {
                    cost += w.to_f64().unwrap() * (utils[sa] - utils[sb]).abs();
                }
                best = best.min(cost);
            }
        }
        assert_relative_eq!(sub.nu, best, epsilon = 1e-7);
    }
}
