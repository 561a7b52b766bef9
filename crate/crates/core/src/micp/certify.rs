//! Constructive feasibility certificates: given a decision `x`, build the
//! full auxiliary-variable assignment that each formulation's equivalence
//! proof prescribes, with the epigraph value equal to the exact fairness
//! objective, then check every model row against it.

use super::builders::BuildOptions;
use super::{ConSense, Formulation, ModelIr, VarKind};
use crate::instance::{BigM, CostKind, DfsoInstance, PieceCombiner};
use crate::measures::merged_grid;
use crate::{Error, Rational, Result};
use num_traits::ToPrimitive;
use std::collections::BTreeMap;

/// Variable assignment by name.
#[derive(Debug, Clone, Default)]
pub struct Assignment {
    pub values: BTreeMap<String, f64>,
}

impl Assignment {
    pub fn set(&mut self, name: String, value: f64) {
        self.values.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

/// Checks the assignment against every variable bound, integrality flag, and
/// constraint row; returns human-readable violation descriptions.
pub fn check_model(model: &ModelIr, asg: &Assignment, tol: f64) -> Vec<String> {
    let mut violations = Vec::new();
    let value = |id: super::VarId| -> Option<f64> { asg.get(&model.var(id).name) };
    for v in model.vars() {
        match asg.get(&v.name) {
            None => violations.push(format!("variable {} unassigned", v.name)),
            Some(val) => {
                if val < v.lb - tol || val > v.ub + tol {
                    violations.push(format!(
                        "bound violation on {}: {} outside [{}, {}]",
                        v.name, val, v.lb, v.ub
                    ));
                }
                if matches!(v.kind, VarKind::Binary | VarKind::Integer)
                    && (val - val.round()).abs() > tol
                {
                    violations.push(format!("integrality violation on {}: {}", v.name, val));
                }
            }
        }
    }
    for c in &model.linear {
        let lhs: f64 = c.terms.iter().filter_map(|&(id, co)| value(id).map(|v| co * v)).sum();
        let bad = match c.sense {
            ConSense::Le => lhs > c.rhs + tol,
            ConSense::Ge => lhs < c.rhs - tol,
            ConSense::Eq => (lhs - c.rhs).abs() > tol,
        };
        if bad {
            violations.push(format!("row {}: lhs {} vs rhs {}", c.name, lhs, c.rhs));
        }
    }
    for c in &model.quadratic {
        let quad: f64 =
            c.quad.iter().filter_map(|&(id, wq)| value(id).map(|v| wq * v * v)).sum();
        let lin: f64 = c.lin.iter().filter_map(|&(id, co)| value(id).map(|v| co * v)).sum();
        if quad + lin > c.rhs + tol {
            violations.push(format!("quad row {}: lhs {} vs rhs {}", c.name, quad + lin, c.rhs));
        }
    }
    for c in &model.bilinear {
        let bi: f64 = c
            .terms
            .iter()
            .filter_map(|&(x, y, co)| match (value(x), value(y)) {
                (Some(a), Some(b)) => Some(co * a * b),
                _ => None,
            })
            .sum();
        let lin: f64 = c.lin.iter().filter_map(|&(id, co)| value(id).map(|v| co * v)).sum();
        if bi + lin > c.rhs + tol {
            violations.push(format!("bilinear row {}: lhs {} vs rhs {}", c.name, bi + lin, c.rhs));
        }
    }
    violations
}

struct GroupView {
    /// Local scenario indices sorted ascending by utility (stable).
    sorted_local: Vec<usize>,
    /// Rank (0-based) of each local index in the sorted order.
    rank_of_local: Vec<usize>,
    /// Utility values in local order.
    utils_local: Vec<f64>,
}

fn group_views(instance: &DfsoInstance, utils: &[f64]) -> Vec<GroupView> {
    (0..instance.population.group_count())
        .map(|a| {
            let members = instance.population.group(a);
            let utils_local: Vec<f64> = members.iter().map(|&i| utils[i]).collect();
            let mut sorted_local: Vec<usize> = (0..members.len()).collect();
            sorted_local.sort_by(|&p, &q| {
                utils_local[p].partial_cmp(&utils_local[q]).unwrap().then(p.cmp(&q))
            });
            let mut rank_of_local = vec![0usize; members.len()];
            for (rank, &li) in sorted_local.iter().enumerate() {
                rank_of_local[li] = rank;
            }
            GroupView { sorted_local, rank_of_local, utils_local }
        })
        .collect()
}

/// Comonotonic plan over sorted ranks: mass of the overlap of the rank
/// intervals `(pa/ma, (pa+1)/ma]` and `(pb/mb, (pb+1)/mb]`.
fn comonotone_overlaps(ma: usize, mb: usize) -> Vec<(usize, usize, Rational)> {
    let mut out = Vec::new();
    for pa in 0..ma {
        let lo_a = Rational::new(pa as i64, ma as i64);
        let hi_a = Rational::new(pa as i64 + 1, ma as i64);
        for pb in 0..mb {
            let lo_b = Rational::new(pb as i64, mb as i64);
            let hi_b = Rational::new(pb as i64 + 1, mb as i64);
            let lo = lo_a.max(lo_b);
            let hi = hi_a.min(hi_b);
            if hi > lo {
                out.push((pa, pb, hi - lo));
            }
        }
    }
    out
}

fn base_assignment(instance: &DfsoInstance, x: &[f64]) -> Result<(Assignment, Vec<f64>)> {
    let mut asg = Assignment::default();
    for (j, &v) in x.iter().enumerate() {
        asg.set(format!("x_{j}"), v);
    }
    let utils = instance.utilities(x)?;
    for (i, &u) in utils.iter().enumerate() {
        asg.set(format!("w_{i}"), u);
        let xi = instance.population.scenario(i);
        let (combiner, pieces) = instance.utility.pieces(xi);
        if matches!(combiner, PieceCombiner::Max | PieceCombiner::Min) {
            let vals: Vec<f64> = pieces
                .iter()
                .map(|(c, d)| c.iter().zip(x).map(|(cj, xj)| cj * xj).sum::<f64>() + d)
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
            for tau in 0..pieces.len() {
                asg.set(format!("zw_{i}_{tau}"), if tau == active { 1.0 } else { 0.0 });
            }
        }
    }
    // Efficiency-band auxiliaries.
    if instance.efficiency.epsilon.is_finite() {
        match instance.efficiency.kind {
            CostKind::AbsDeviation => {
                for (i, y) in instance.efficiency.responses.iter().enumerate() {
                    let xi = instance.population.scenario(i);
                    let r = xi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - y;
                    asg.set(format!("e_{i}"), r.abs());
                }
            }
            CostKind::SquaredDeviation => {
                for (i, y) in instance.efficiency.responses.iter().enumerate() {
                    let xi = instance.population.scenario(i);
                    let r = xi.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - y;
                    asg.set(format!("r_{i}"), r);
                }
            }
            _ => {}
        }
    }
    Ok((asg, utils))
}

fn pairs(instance: &DfsoInstance) -> Vec<(usize, usize)> {
    let g = instance.population.group_count();
    let mut out = Vec::new();
    for a in 0..g {
        for b in a + 1..g {
            out.push((a, b));
        }
    }
    out
}

fn fill_quantile_sets(
    asg: &mut Assignment,
    instance: &DfsoInstance,
    views: &[GroupView],
) {
    for (a, view) in views.iter().enumerate() {
        let ma = instance.population.group_size(a);
        for k in 1..=ma {
            let kth = view.utils_local[view.sorted_local[k - 1]];
            asg.set(format!("t_{k}_{a}"), kth);
            for li in 0..ma {
                let selected = view.rank_of_local[li] < k;
                let is_kth = view.rank_of_local[li] == k - 1;
                asg.set(format!("z_{li}_{k}_{a}"), if selected { 1.0 } else { 0.0 });
                asg.set(format!("p_{li}_{k}_{a}"), if is_kth { 1.0 } else { 0.0 });
                asg.set(
                    format!("th_{li}_{k}_{a}"),
                    if is_kth { view.utils_local[li] } else { 0.0 },
                );
            }
        }
    }
}

fn fill_grid_etas(
    asg: &mut Assignment,
    instance: &DfsoInstance,
    views: &[GroupView],
) -> Result<()> {
    for (a, b) in pairs(instance) {
        let (ma, mb) = (views[a].utils_local.len(), views[b].utils_local.len());
        let grid = merged_grid(ma, mb)?;
        for (c, cell) in grid.cells().iter().enumerate() {
            let va = views[a].utils_local[views[a].sorted_local[cell.j_a - 1]];
            let vb = views[b].utils_local[views[b].sorted_local[cell.j_abar - 1]];
            asg.set(format!("eta_{a}_{b}_{c}"), (va - vb).abs());
        }
    }
    Ok(())
}

/// Builds the constructive completion of `formulation` at the decision `x`:
/// the assignment realizes the epigraph value `nu = WD_q^q(x)` exactly.
pub fn complete_at(
    instance: &DfsoInstance,
    big_m: &BigM,
    formulation: Formulation,
    opts: BuildOptions,
    x: &[f64],
) -> Result<Assignment> {
    let (mut asg, utils) = base_assignment(instance, x)?;
    let views = group_views(instance, &utils);
    let nu = instance.wd_objective(x)?;
    asg.set("nu".into(), nu);

    match formulation {
        Formulation::Quantile => {
            fill_quantile_sets(&mut asg, instance, &views);
            fill_grid_etas(&mut asg, instance, &views)?;
        }
        Formulation::AggregateQuantile => {
            for (a, view) in views.iter().enumerate() {
                let ma = view.utils_local.len();
                let mut prefix = 0.0;
                for k in 1..=ma {
                    let kth = view.utils_local[view.sorted_local[k - 1]];
                    prefix += kth;
                    asg.set(format!("tb_{k}_{a}"), prefix);
                    asg.set(format!("t_{k}_{a}"), kth);
                    asg.set(format!("pj_{k}_{a}"), kth);
                    for li in 0..ma {
                        let selected = view.rank_of_local[li] < k;
                        asg.set(format!("z_{li}_{k}_{a}"), if selected { 1.0 } else { 0.0 });
                        asg.set(
                            format!("s_{li}_{k}_{a}"),
                            if selected { view.utils_local[li] } else { 0.0 },
                        );
                        asg.set(
                            format!("rho_{li}_{k}_{a}"),
                            (kth - view.utils_local[li]).max(0.0),
                        );
                    }
                }
            }
            fill_grid_etas(&mut asg, instance, &views)?;
        }
        Formulation::Vanilla => {
            for (a, b) in pairs(instance) {
                let (ma, mb) = (views[a].utils_local.len(), views[b].utils_local.len());
                let mut plan = vec![vec![Rational::new(0, 1); mb]; ma];
                for (pa, pb, mass) in comonotone_overlaps(ma, mb) {
                    let (la, lb) = (views[a].sorted_local[pa], views[b].sorted_local[pb]);
                    plan[la][lb] = mass;
                }
                for (la, row) in plan.iter().enumerate() {
                    for (lb, mass) in row.iter().enumerate() {
                        asg.set(
                            format!("pi_{a}_{b}_{la}_{lb}"),
                            mass.to_f64().expect("small rational"),
                        );
                        let gap =
                            (views[a].utils_local[la] - views[b].utils_local[lb]).abs();
                        asg.set(format!("dv_{a}_{b}_{la}_{lb}"), gap);
                        if instance.q == 2.0 {
                            asg.set(format!("wq_{a}_{b}_{la}_{lb}"), gap * gap);
                        }
                    }
                }
            }
        }
        Formulation::Discretized => {
            for (a, b) in pairs(instance) {
                let (ma, mb) = (views[a].utils_local.len(), views[b].utils_local.len());
                let omega = (ma.min(mb) as f64).log2().ceil() as usize + 1;
                let scale = Rational::new((ma * mb) as i64, 1);
                let mut flows = vec![vec![0i64; mb]; ma];
                for (pa, pb, mass) in comonotone_overlaps(ma, mb) {
                    let scaled = mass * scale;
                    debug_assert!(scaled.is_integer());
                    let (la, lb) = (views[a].sorted_local[pa], views[b].sorted_local[pb]);
                    flows[la][lb] = scaled.to_integer();
                }
                for (la, row) in flows.iter().enumerate() {
                    for (lb, &flow) in row.iter().enumerate() {
                        let wa = views[a].utils_local[la];
                        let wb = views[b].utils_local[lb];
                        for k in 0..omega {
                            let kk = k + 1;
                            let bit = ((flow >> k) & 1) as f64;
                            asg.set(format!("z_{a}_{b}_{la}_{lb}_{kk}"), bit);
                            asg.set(format!("zh1_{a}_{b}_{la}_{lb}_{kk}"), bit * wa);
                            asg.set(format!("zh2_{a}_{b}_{la}_{lb}_{kk}"), bit * wb);
                            asg.set(format!("wd_{a}_{b}_{la}_{lb}_{kk}"), bit * (wa - wb).abs());
                        }
                        if opts.cuts {
                            asg.set(
                                format!("zs_{a}_{b}_{la}_{lb}"),
                                if flow > 0 { 1.0 } else { 0.0 },
                            );
                        }
                    }
                }
            }
        }
        Formulation::Complementary => {
            if big_m.overflow {
                return Err(Error::resource("complementary big-M overflowed"));
            }
            for (a, b) in pairs(instance) {
                let (ma, mb) = (views[a].utils_local.len(), views[b].utils_local.len());
                // Exact transportation duals from the oracle on the pair.
                let da = crate::measures::EmpiricalDist::new(views[a].utils_local.clone())?;
                let db = crate::measures::EmpiricalDist::new(views[b].utils_local.clone())?;
                let sol = crate::measures::ot_bruteforce_plan(&da, &db, instance.q)?;
                for la in 0..ma {
                    asg.set(
                        format!("mu_{a}_{b}_{la}"),
                        sol.supply_duals[views[a].rank_of_local[la]],
                    );
                }
                for lb in 0..mb {
                    asg.set(
                        format!("la_{a}_{b}_{lb}"),
                        sol.demand_duals[views[b].rank_of_local[lb]],
                    );
                }
                let mut plan = vec![vec![Rational::new(0, 1); mb]; ma];
                for (pa, pb, mass) in comonotone_overlaps(ma, mb) {
                    let (la, lb) = (views[a].sorted_local[pa], views[b].sorted_local[pb]);
                    plan[la][lb] = mass;
                }
                for (la, row) in plan.iter().enumerate() {
                    for (lb, mass) in row.iter().enumerate() {
                        let massf = mass.to_f64().expect("small rational");
                        asg.set(format!("pi_{a}_{b}_{la}_{lb}"), massf);
                        asg.set(format!("zc_{a}_{b}_{la}_{lb}"), if massf > 0.0 { 1.0 } else { 0.0 });
                        let gap =
                            (views[a].utils_local[la] - views[b].utils_local[lb]).abs();
                        asg.set(format!("dv_{a}_{b}_{la}_{lb}"), gap);
                        asg.set(
                            format!("wq_{a}_{b}_{la}_{lb}"),
                            crate::measures::pow_q(gap, instance.q),
                        );
                    }
                }
            }
        }
        Formulation::KsdSublevel => {
            fill_quantile_sets(&mut asg, instance, &views);
            asg.set("nu".into(), instance.mean_cost(x)?);
        }
    }
    Ok(asg)
}
