//! Builders for the exact mixed-integer formulations of the fairness
//! epigraph and the KSD sublevel set.
//!
//! All builders share the same scaffolding: decision variables `x_j`,
//! utility-graph variables `w_i` with their linking rows, the efficiency
//! band, and the epigraph variable `nu`. Variable names are deterministic
//! so emitted files diff and round-trip stably.

use super::{ConSense, McCormickBlock, ModelIr, VarId, VarKind};
use crate::instance::{
    band_threshold, utility_range, BigM, CostKind, DfsoInstance, PieceCombiner,
};
use crate::measures::merged_grid;
use crate::{Error, Rational, Result};
use num_traits::{Signed, ToPrimitive, Zero};

/// Builder options; `cuts` adds the monotonicity inequalities to the
/// quantile formulations and the support-size inequalities to the
/// discretized one.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    pub cuts: bool,
}

pub(crate) struct Scaffold {
    pub w: Vec<VarId>,
    pub nu: VarId,
}

fn check_model_q(q: f64) -> Result<()> {
    if q != 1.0 && q != 2.0 {
        return Err(Error::unsupported(format!(
            "model builders support q in {{1, 2}}, got {q}"
        )));
    }
    Ok(())
}

fn require_v_star(instance: &DfsoInstance) -> Result<()> {
    if instance.efficiency.epsilon.is_finite() && instance.efficiency.v_star.is_none() {
        return Err(Error::domain("solve V* before building models with a finite band"));
    }
    Ok(())
}

/// Decision variables `x_j` with the feasible set's rows.
fn add_decision_vars(model: &mut ModelIr, instance: &DfsoInstance) -> Result<Vec<VarId>> {
    let fs = &instance.feasible;
    let flags = fs.integer_flags();
    let mut x = Vec::with_capacity(fs.n());
    for j in 0..fs.n() {
        let kind = if flags[j] {
            if fs.lower[j] == 0.0 && fs.upper[j] == 1.0 {
                VarKind::Binary
            } else {
                VarKind::Integer
            }
        } else {
            VarKind::Continuous
        };
        x.push(model.add_var(format!("x_{j}"), fs.lower[j], fs.upper[j], kind)?);
    }
    for (r, t) in fs.inequalities.iter().enumerate() {
        let terms: Vec<(VarId, f64)> = t
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (x[j], c))
            .collect();
        model.add_lin(format!("feas_le_{r}"), terms, ConSense::Le, t.rhs);
    }
    for (r, t) in fs.equalities.iter().enumerate() {
        let terms: Vec<(VarId, f64)> = t
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (x[j], c))
            .collect();
        model.add_lin(format!("feas_eq_{r}"), terms, ConSense::Eq, t.rhs);
    }
    Ok(x)
}

/// Utility-graph variables `w_i` tied to `x` per the utility model: an
/// equality for linear utilities, the piece-selection block for piecewise
/// ones (covers the exp/log tangent surrogates too).
fn add_utility_graph(
    model: &mut ModelIr,
    instance: &DfsoInstance,
    x: &[VarId],
) -> Result<Vec<VarId>> {
    let mut w = Vec::with_capacity(instance.population.len());
    for i in 0..instance.population.len() {
        let (lo, hi) = utility_range(instance, i);
        let wi = model.add_var(format!("w_{i}"), lo, hi, VarKind::Continuous)?;
        w.push(wi);
        let xi = instance.population.scenario(i);
        let (combiner, pieces) = instance.utility.pieces(xi);
        match combiner {
            PieceCombiner::Single => {
                let (c, d) = &pieces[0];
                let mut terms = vec![(wi, 1.0)];
                for (j, &cj) in c.iter().enumerate() {
                    if cj != 0.0 {
                        terms.push((x[j], -cj));
                    }
                }
                model.add_lin(format!("graph_{i}"), terms, ConSense::Eq, *d);
            }
            PieceCombiner::Max | PieceCombiner::Min => {
                let piece_ranges: Vec<(f64, f64)> = pieces
                    .iter()
                    .map(|(c, d)| {
                        crate::instance::affine_range(
                            c,
                            *d,
                            &instance.feasible.lower,
                            &instance.feasible.upper,
                        )
                    })
                    .collect();
                let mut selectors = Vec::with_capacity(pieces.len());
                for tau in 0..pieces.len() {
                    selectors.push(model.add_var(
                        format!("zw_{i}_{tau}"),
                        0.0,
                        1.0,
                        VarKind::Binary,
                    )?);
                }
                for (tau, (c, d)) in pieces.iter().enumerate() {
                    let base: Vec<(VarId, f64)> = std::iter::once((wi, 1.0))
                        .chain(
                            c.iter()
                                .enumerate()
                                .filter(|(_, &cj)| cj != 0.0)
                                .map(|(j, &cj)| (x[j], -cj)),
                        )
                        .collect();
                    match combiner {
                        PieceCombiner::Max => {
                            // w_i >= piece_tau, and w_i <= piece_tau + gap (1 - z).
                            model.add_lin(
                                format!("graph_lo_{i}_{tau}"),
                                base.clone(),
                                ConSense::Ge,
                                *d,
                            );
                            let gap = (hi - piece_ranges[tau].0).max(0.0);
                            let mut terms = base.clone();
                            terms.push((selectors[tau], gap));
                            model.add_lin(
                                format!("graph_hi_{i}_{tau}"),
                                terms,
                                ConSense::Le,
                                d + gap,
                            );
                        }
                        PieceCombiner::Min => {
                            model.add_lin(
                                format!("graph_hi_{i}_{tau}"),
                                base.clone(),
                                ConSense::Le,
                                *d,
                            );
                            let gap = (piece_ranges[tau].1 - lo).max(0.0);
                            let mut terms = base.clone();
                            terms.push((selectors[tau], -gap));
                            model.add_lin(
                                format!("graph_lo_{i}_{tau}"),
                                terms,
                                ConSense::Ge,
                                d - gap,
                            );
                        }
                        PieceCombiner::Single => unreachable!(),
                    }
                }
                let sum: Vec<(VarId, f64)> = selectors.iter().map(|&z| (z, 1.0)).collect();
                model.add_lin(format!("graph_pick_{i}"), sum, ConSense::Eq, 1.0);
            }
        }
    }
    Ok(w)
}

/// Efficiency-band rows `E[Q(x, xi)] <= V* + eps |V*|`.
fn add_band_rows(model: &mut ModelIr, instance: &DfsoInstance, x: &[VarId]) -> Result<()> {
    if instance.efficiency.epsilon.is_infinite() {
        return Ok(());
    }
    let threshold = band_threshold(&instance.efficiency)?;
    let m = instance.population.len() as f64;
    match instance.efficiency.kind {
        CostKind::LinearCost | CostKind::NegValue => {
            let sign = if instance.efficiency.kind == CostKind::NegValue { -1.0 } else { 1.0 };
            let mut coeffs = vec![0.0; x.len()];
            for s in instance.population.scenarios() {
                for (j, &v) in s.iter().enumerate() {
                    coeffs[j] += sign * v / m;
                }
            }
            let terms: Vec<(VarId, f64)> = coeffs
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0.0)
                .map(|(j, &c)| (x[j], c))
                .collect();
            model.add_lin("band", terms, ConSense::Le, threshold);
        }
        CostKind::AbsDeviation => {
            let mut es = Vec::with_capacity(instance.population.len());
            for (i, y) in instance.efficiency.responses.iter().enumerate() {
                let xi = instance.population.scenario(i);
                let (lo, hi) = crate::instance::affine_range(
                    xi,
                    -y,
                    &instance.feasible.lower,
                    &instance.feasible.upper,
                );
                let bound = lo.abs().max(hi.abs());
                let e = model.add_var(format!("e_{i}"), 0.0, bound, VarKind::Continuous)?;
                let pos: Vec<(VarId, f64)> = std::iter::once((e, 1.0))
                    .chain(
                        xi.iter()
                            .enumerate()
                            .filter(|(_, &c)| c != 0.0)
                            .map(|(j, &c)| (x[j], -c)),
                    )
                    .collect();
                model.add_lin(format!("abs_pos_{i}"), pos, ConSense::Ge, -y);
                let neg: Vec<(VarId, f64)> = std::iter::once((e, 1.0))
                    .chain(
                        xi.iter()
                            .enumerate()
                            .filter(|(_, &c)| c != 0.0)
                            .map(|(j, &c)| (x[j], c)),
                    )
                    .collect();
                model.add_lin(format!("abs_neg_{i}"), neg, ConSense::Ge, *y);
                es.push(e);
            }
            let terms: Vec<(VarId, f64)> = es.iter().map(|&e| (e, 1.0 / m)).collect();
            model.add_lin("band", terms, ConSense::Le, threshold);
        }
        CostKind::SquaredDeviation => {
            let mut rs = Vec::with_capacity(instance.population.len());
            for (i, y) in instance.efficiency.responses.iter().enumerate() {
                let xi = instance.population.scenario(i);
                let (lo, hi) = crate::instance::affine_range(
                    xi,
                    -y,
                    &instance.feasible.lower,
                    &instance.feasible.upper,
                );
                let r = model.add_var(format!("r_{i}"), lo, hi, VarKind::Continuous)?;
                let terms: Vec<(VarId, f64)> = std::iter::once((r, 1.0))
                    .chain(
                        xi.iter()
                            .enumerate()
                            .filter(|(_, &c)| c != 0.0)
                            .map(|(j, &c)| (x[j], -c)),
                    )
                    .collect();
                model.add_lin(format!("resid_{i}"), terms, ConSense::Eq, -y);
                rs.push(r);
            }
            model.quadratic.push(super::QuadCon {
                name: "band".into(),
                quad: rs.iter().map(|&r| (r, 1.0 / m)).collect(),
                lin: vec![],
                rhs: threshold,
            });
        }
        CostKind::NegGeoMeanLog => {
            return Err(Error::unsupported(
                "the geometric-mean band is not linear/quadratic representable; \
                 emit models for this cost kind with an infinite band",
            ));
        }
    }
    Ok(())
}

/// Upper bound on the epigraph variable.
fn nu_upper(instance: &DfsoInstance, big_m: &BigM) -> f64 {
    let groups = instance.population.group_count();
    let mut worst = 0.0f64;
    for a in 0..groups {
        for b in a + 1..groups {
            let ma = big_m.group_sorted_asc[a].last().copied().unwrap_or(0.0);
            let mb = big_m.group_sorted_asc[b].last().copied().unwrap_or(0.0);
            worst = worst.max(crate::measures::pow_q(ma + mb, instance.q));
        }
    }
    worst
}

fn begin(
    name: &str,
    instance: &DfsoInstance,
    big_m: &BigM,
) -> Result<(ModelIr, Scaffold)> {
    check_model_q(instance.q)?;
    require_v_star(instance)?;
    let mut model = ModelIr::new(name);
    let x = add_decision_vars(&mut model, instance)?;
    let w = add_utility_graph(&mut model, instance, &x)?;
    add_band_rows(&mut model, instance, &x)?;
    let nu = model.add_var("nu", 0.0, nu_upper(instance, big_m), VarKind::Continuous)?;
    model.objective = vec![(nu, 1.0)];
    Ok((model, Scaffold { w, nu }))
}

/// Ordered group pairs `a < b`.
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

/// Per-pair epigraph row over merged-grid cells:
/// `sum_i width_i eta_i^q <= nu`, with `|t-gap| <= eta_i` rows.
/// `t_of(group, k)` maps a group and 1-based quantile level to its variable.
fn add_grid_rows(
    model: &mut ModelIr,
    instance: &DfsoInstance,
    big_m: &BigM,
    nu: VarId,
    t_of: &dyn Fn(usize, usize) -> VarId,
) -> Result<()> {
    for (a, b) in pairs(instance) {
        let ma = instance.population.group_size(a);
        let mb = instance.population.group_size(b);
        let grid = merged_grid(ma, mb)?;
        let gap_bound = big_m.group_sorted_asc[a].last().unwrap()
            + big_m.group_sorted_asc[b].last().unwrap();
        let mut etas = Vec::with_capacity(grid.cells().len());
        for (c, cell) in grid.cells().iter().enumerate() {
            let eta =
                model.add_var(format!("eta_{a}_{b}_{c}"), 0.0, gap_bound, VarKind::Continuous)?;
            let ta = t_of(a, cell.j_a);
            let tb = t_of(b, cell.j_abar);
            model.add_lin(
                format!("gap_pos_{a}_{b}_{c}"),
                vec![(ta, 1.0), (tb, -1.0), (eta, -1.0)],
                ConSense::Le,
                0.0,
            );
            model.add_lin(
                format!("gap_neg_{a}_{b}_{c}"),
                vec![(tb, 1.0), (ta, -1.0), (eta, -1.0)],
                ConSense::Le,
                0.0,
            );
            etas.push((eta, cell.width));
        }
        if instance.q == 1.0 {
            let mut terms: Vec<(VarId, f64)> = etas
                .iter()
                .map(|&(eta, width)| (eta, width.to_f64().expect("small rational")))
                .collect();
            terms.push((nu, -1.0));
            model.add_lin(format!("epi_{a}_{b}"), terms, ConSense::Le, 0.0);
        } else {
            model.quadratic.push(super::QuadCon {
                name: format!("epi_{a}_{b}"),
                quad: etas
                    .iter()
                    .map(|&(eta, width)| (eta, width.to_f64().expect("small rational")))
                    .collect(),
                lin: vec![(nu, -1.0)],
                rhs: 0.0,
            });
        }
    }
    Ok(())
}

/// Quantile-set variables and rows for every group and level; returns the
/// `t` variable per `(group, level)` (1-based level flattened as `t[a][k-1]`).
///
/// The big-M coefficients differ per row side: `t_ka >= w_i - c (1 - z)`
/// needs `c = M_i + (k-th largest M in the group)` while
/// `t_ka <= w_i + c z` needs `c = M_i + (k-th smallest M)`; a single
/// `M_i + M_(k)` is not valid for heterogeneous per-scenario bounds.
fn add_quantile_sets(
    model: &mut ModelIr,
    instance: &DfsoInstance,
    big_m: &BigM,
    w: &[VarId],
) -> Result<Vec<Vec<VarId>>> {
    let mut all_t = Vec::with_capacity(instance.population.group_count());
    for a in 0..instance.population.group_count() {
        let members = instance.population.group(a).to_vec();
        let ma = members.len();
        let mut t_group = Vec::with_capacity(ma);
        for k in 1..=ma {
            let t_lo = -big_m.kth_largest(a, k);
            let t_hi = big_m.kth_smallest(a, k);
            let t = model.add_var(format!("t_{k}_{a}"), t_lo, t_hi, VarKind::Continuous)?;
            t_group.push(t);

            let mut zs = Vec::with_capacity(ma);
            let mut ps = Vec::with_capacity(ma);
            let mut ths = Vec::with_capacity(ma);
            for (li, &i) in members.iter().enumerate() {
                let z = model.add_var(format!("z_{li}_{k}_{a}"), 0.0, 1.0, VarKind::Binary)?;
                let p = model.add_var(format!("p_{li}_{k}_{a}"), 0.0, 1.0, VarKind::Binary)?;
                let mi = big_m.per_scenario[i];
                let th =
                    model.add_var(format!("th_{li}_{k}_{a}"), -mi, mi, VarKind::Continuous)?;
                model.add_lin(
                    format!("link_{li}_{k}_{a}"),
                    vec![(p, 1.0), (z, -1.0)],
                    ConSense::Le,
                    0.0,
                );
                // t >= w_i - c1 (1 - z)
                let c1 = mi + big_m.kth_largest(a, k);
                model.add_lin(
                    format!("tlo_{li}_{k}_{a}"),
                    vec![(t, 1.0), (w[i], -1.0), (z, -c1)],
                    ConSense::Ge,
                    -c1,
                );
                // t <= w_i + c2 z
                let c2 = mi + big_m.kth_smallest(a, k);
                model.add_lin(
                    format!("thi_{li}_{k}_{a}"),
                    vec![(t, 1.0), (w[i], -1.0), (z, -c2)],
                    ConSense::Le,
                    0.0,
                );
                McCormickBlock {
                    psi: th,
                    kappa: p,
                    nu: w[i],
                    kappa_bounds: (0.0, 1.0),
                    nu_bounds: (-mi, mi),
                }
                .emit(model, &format!("{li}_{k}_{a}"));
                zs.push(z);
                ps.push(p);
                ths.push(th);
            }
            let zsum: Vec<(VarId, f64)> = zs.iter().map(|&z| (z, 1.0)).collect();
            model.add_lin(format!("zsum_{k}_{a}"), zsum, ConSense::Eq, k as f64);
            let psum: Vec<(VarId, f64)> = ps.iter().map(|&p| (p, 1.0)).collect();
            model.add_lin(format!("psum_{k}_{a}"), psum, ConSense::Eq, 1.0);
            let mut tsel: Vec<(VarId, f64)> = vec![(t, 1.0)];
            tsel.extend(ths.iter().map(|&th| (th, -1.0)));
            model.add_lin(format!("tsel_{k}_{a}"), tsel, ConSense::Eq, 0.0);
        }
        all_t.push(t_group);
    }
    Ok(all_t)
}

/// Monotonicity cuts on quantile variables and selections: quantiles grow
/// with the level and a scenario selected among the k smallest stays
/// selected among the k+1 smallest.
fn add_monotone_cuts(model: &mut ModelIr, instance: &DfsoInstance, t: &[Vec<VarId>]) {
    for (a, group_t) in t.iter().enumerate() {
        let ma = group_t.len();
        for k in 1..ma {
            model.add_lin(
                format!("cut_t_{k}_{a}"),
                vec![(group_t[k - 1], 1.0), (group_t[k], -1.0)],
                ConSense::Le,
                0.0,
            );
        }
        for li in 0..instance.population.group_size(a) {
            for k in 1..ma {
                let zk = model.var_by_name(&format!("z_{li}_{k}_{a}")).expect("builder names");
                let zk1 =
                    model.var_by_name(&format!("z_{li}_{}_{a}", k + 1)).expect("builder names");
                model.add_lin(
                    format!("cut_z_{li}_{k}_{a}"),
                    vec![(zk, 1.0), (zk1, -1.0)],
                    ConSense::Le,
                    0.0,
                );
            }
        }
    }
}

/// Quantile formulation: order-statistic selections per group/level with
/// McCormick-linearized quantile values and merged-grid epigraph rows.
pub fn build_quantile(
    instance: &DfsoInstance,
    big_m: &BigM,
    opts: BuildOptions,
) -> Result<ModelIr> {
    let (mut model, scaffold) = begin("dfso_quantile", instance, big_m)?;
    let t = add_quantile_sets(&mut model, instance, big_m, &scaffold.w)?;
    add_grid_rows(&mut model, instance, big_m, scaffold.nu, &|a, k| t[a][k - 1])?;
    if opts.cuts {
        add_monotone_cuts(&mut model, instance, &t);
    }
    model.validate()?;
    Ok(model)
}

/// Aggregate quantile formulation: partial sums of order statistics with a
/// dual upper side and a McCormick lower side, then differencing.
pub fn build_aggregate_quantile(
    instance: &DfsoInstance,
    big_m: &BigM,
    opts: BuildOptions,
) -> Result<ModelIr> {
    let (mut model, scaffold) = begin("dfso_aggregate_quantile", instance, big_m)?;
    let w = &scaffold.w;
    let mut all_t: Vec<Vec<VarId>> = Vec::with_capacity(instance.population.group_count());
    for a in 0..instance.population.group_count() {
        let members = instance.population.group(a).to_vec();
        let ma = members.len();
        // Prefix-sum bounds for the aggregate variables.
        let asc = &big_m.group_sorted_asc[a];
        let mut prefix_asc = vec![0.0; ma + 1];
        let mut prefix_desc = vec![0.0; ma + 1];
        for k in 1..=ma {
            prefix_asc[k] = prefix_asc[k - 1] + asc[k - 1];
            prefix_desc[k] = prefix_desc[k - 1] + asc[ma - k];
        }
        let mut tb_group = Vec::with_capacity(ma);
        let mut t_group = Vec::with_capacity(ma);
        for k in 1..=ma {
            let tb = model.add_var(
                format!("tb_{k}_{a}"),
                -prefix_desc[k],
                prefix_asc[k],
                VarKind::Continuous,
            )?;
            let pj = model.add_var(
                format!("pj_{k}_{a}"),
                -big_m.kth_largest(a, k),
                big_m.kth_smallest(a, k),
                VarKind::Continuous,
            )?;
            let mut zs = Vec::with_capacity(ma);
            let mut rhos = Vec::with_capacity(ma);
            let mut ss = Vec::with_capacity(ma);
            for (li, &i) in members.iter().enumerate() {
                let mi = big_m.per_scenario[i];
                let z = model.add_var(format!("z_{li}_{k}_{a}"), 0.0, 1.0, VarKind::Binary)?;
                let rho = model.add_var(
                    format!("rho_{li}_{k}_{a}"),
                    0.0,
                    mi + big_m.kth_smallest(a, k),
                    VarKind::Continuous,
                )?;
                let s =
                    model.add_var(format!("s_{li}_{k}_{a}"), -mi, mi, VarKind::Continuous)?;
                // pj - rho_i <= w_i
                model.add_lin(
                    format!("dual_{li}_{k}_{a}"),
                    vec![(pj, 1.0), (rho, -1.0), (w[i], -1.0)],
                    ConSense::Le,
                    0.0,
                );
                McCormickBlock {
                    psi: s,
                    kappa: z,
                    nu: w[i],
                    kappa_bounds: (0.0, 1.0),
                    nu_bounds: (-mi, mi),
                }
                .emit(&mut model, &format!("{li}_{k}_{a}"));
                zs.push(z);
                rhos.push(rho);
                ss.push(s);
            }
            let zsum: Vec<(VarId, f64)> = zs.iter().map(|&z| (z, 1.0)).collect();
            model.add_lin(format!("zsum_{k}_{a}"), zsum, ConSense::Eq, k as f64);
            // tb <= k pj - sum rho
            let mut upper: Vec<(VarId, f64)> = vec![(tb, 1.0), (pj, -(k as f64))];
            upper.extend(rhos.iter().map(|&r| (r, 1.0)));
            model.add_lin(format!("tb_hi_{k}_{a}"), upper, ConSense::Le, 0.0);
            // tb >= sum s
            let mut lower: Vec<(VarId, f64)> = vec![(tb, 1.0)];
            lower.extend(ss.iter().map(|&s| (s, -1.0)));
            model.add_lin(format!("tb_lo_{k}_{a}"), lower, ConSense::Ge, 0.0);
            tb_group.push(tb);
        }
        // Differencing t_k = tb_k - tb_{k-1} with tb_0 = 0.
        for k in 1..=ma {
            let t = model.add_var(
                format!("t_{k}_{a}"),
                -big_m.kth_largest(a, k),
                big_m.kth_smallest(a, k),
                VarKind::Continuous,
            )?;
            let mut terms = vec![(t, 1.0), (tb_group[k - 1], -1.0)];
            if k >= 2 {
                terms.push((tb_group[k - 2], 1.0));
            }
            model.add_lin(format!("diff_{k}_{a}"), terms, ConSense::Eq, 0.0);
            t_group.push(t);
        }
        all_t.push(t_group);
    }
    add_grid_rows(&mut model, instance, big_m, scaffold.nu, &|a, k| all_t[a][k - 1])?;
    if opts.cuts {
        add_monotone_cuts(&mut model, instance, &all_t);
    }
    model.validate()?;
    Ok(model)
}

/// Vanilla formulation: continuous transportation plans with bilinear
/// objective terms, flagged nonconvex.
pub fn build_vanilla(instance: &DfsoInstance, big_m: &BigM) -> Result<ModelIr> {
    let (mut model, scaffold) = begin("dfso_vanilla", instance, big_m)?;
    let w = &scaffold.w;
    for (a, b) in pairs(instance) {
        let ga = instance.population.group(a).to_vec();
        let gb = instance.population.group(b).to_vec();
        let (ma, mb) = (ga.len(), gb.len());
        let cap = (1.0 / ma as f64).min(1.0 / mb as f64);
        let mut plan = vec![vec![VarId(0); mb]; ma];
        let mut bilinear_terms: Vec<(VarId, VarId, f64)> = Vec::new();
        for (p, &i) in ga.iter().enumerate() {
            for (r, &j) in gb.iter().enumerate() {
                let pi =
                    model.add_var(format!("pi_{a}_{b}_{p}_{r}"), 0.0, cap, VarKind::Continuous)?;
                plan[p][r] = pi;
                let gap_bound = big_m.per_scenario[i] + big_m.per_scenario[j];
                let dv = model.add_var(
                    format!("dv_{a}_{b}_{p}_{r}"),
                    0.0,
                    gap_bound,
                    VarKind::Continuous,
                )?;
                model.add_lin(
                    format!("dv_pos_{a}_{b}_{p}_{r}"),
                    vec![(dv, 1.0), (w[i], -1.0), (w[j], 1.0)],
                    ConSense::Ge,
                    0.0,
                );
                model.add_lin(
                    format!("dv_neg_{a}_{b}_{p}_{r}"),
                    vec![(dv, 1.0), (w[i], 1.0), (w[j], -1.0)],
                    ConSense::Ge,
                    0.0,
                );
                if instance.q == 1.0 {
                    bilinear_terms.push((pi, dv, 1.0));
                } else {
                    let wq = model.add_var(
                        format!("wq_{a}_{b}_{p}_{r}"),
                        0.0,
                        gap_bound * gap_bound,
                        VarKind::Continuous,
                    )?;
                    model.quadratic.push(super::QuadCon {
                        name: format!("pow_{a}_{b}_{p}_{r}"),
                        quad: vec![(dv, 1.0)],
                        lin: vec![(wq, -1.0)],
                        rhs: 0.0,
                    });
                    bilinear_terms.push((pi, wq, 1.0));
                }
            }
        }
        for (p, _) in ga.iter().enumerate() {
            let terms: Vec<(VarId, f64)> = (0..mb).map(|r| (plan[p][r], 1.0)).collect();
            model.add_lin(format!("row_{a}_{b}_{p}"), terms, ConSense::Eq, 1.0 / ma as f64);
        }
        for r in 0..mb {
            let terms: Vec<(VarId, f64)> = (0..ma).map(|p| (plan[p][r], 1.0)).collect();
            model.add_lin(format!("col_{a}_{b}_{r}"), terms, ConSense::Eq, 1.0 / mb as f64);
        }
        model.bilinear.push(super::BilinearCon {
            name: format!("epi_{a}_{b}"),
            terms: bilinear_terms,
            lin: vec![(scaffold.nu, -1.0)],
            rhs: 0.0,
        });
    }
    model.validate()?;
    Ok(model)
}

/// Discretized formulation: bit-expanded integral transportation plans with
/// two McCormick blocks per bit, exact by transportation integrality.
pub fn build_discretized(
    instance: &DfsoInstance,
    big_m: &BigM,
    opts: BuildOptions,
) -> Result<ModelIr> {
    let (mut model, scaffold) = begin("dfso_discretized", instance, big_m)?;
    let w = &scaffold.w;
    for (a, b) in pairs(instance) {
        let ga = instance.population.group(a).to_vec();
        let gb = instance.population.group(b).to_vec();
        let (ma, mb) = (ga.len(), gb.len());
        let omega = (ma.min(mb) as f64).log2().ceil() as usize + 1;
        let scale = 1.0 / (ma as f64 * mb as f64);
        // z[p][r][k], objective pieces, and the Gamma marginal rows.
        let mut z = vec![vec![vec![VarId(0); omega]; mb]; ma];
        let mut epi_lin: Vec<(VarId, f64)> = Vec::new();
        let mut epi_quad: Vec<(VarId, f64)> = Vec::new();
        let mut support = vec![vec![VarId(0); mb]; ma];
        for (p, &i) in ga.iter().enumerate() {
            for (r, &j) in gb.iter().enumerate() {
                if opts.cuts {
                    support[p][r] =
                        model.add_var(format!("zs_{a}_{b}_{p}_{r}"), 0.0, 1.0, VarKind::Binary)?;
                }
                let mi = big_m.per_scenario[i];
                let mj = big_m.per_scenario[j];
                for k in 0..omega {
                    let kk = k + 1;
                    let zv = model.add_var(
                        format!("z_{a}_{b}_{p}_{r}_{kk}"),
                        0.0,
                        1.0,
                        VarKind::Binary,
                    )?;
                    z[p][r][k] = zv;
                    let zh1 = model.add_var(
                        format!("zh1_{a}_{b}_{p}_{r}_{kk}"),
                        -mi,
                        mi,
                        VarKind::Continuous,
                    )?;
                    let zh2 = model.add_var(
                        format!("zh2_{a}_{b}_{p}_{r}_{kk}"),
                        -mj,
                        mj,
                        VarKind::Continuous,
                    )?;
                    McCormickBlock {
                        psi: zh1,
                        kappa: zv,
                        nu: w[i],
                        kappa_bounds: (0.0, 1.0),
                        nu_bounds: (-mi, mi),
                    }
                    .emit(&mut model, &format!("a_{a}_{b}_{p}_{r}_{kk}"));
                    McCormickBlock {
                        psi: zh2,
                        kappa: zv,
                        nu: w[j],
                        kappa_bounds: (0.0, 1.0),
                        nu_bounds: (-mj, mj),
                    }
                    .emit(&mut model, &format!("b_{a}_{b}_{p}_{r}_{kk}"));
                    let wd = model.add_var(
                        format!("wd_{a}_{b}_{p}_{r}_{kk}"),
                        0.0,
                        mi + mj,
                        VarKind::Continuous,
                    )?;
                    model.add_lin(
                        format!("wd_pos_{a}_{b}_{p}_{r}_{kk}"),
                        vec![(wd, 1.0), (zh1, -1.0), (zh2, 1.0)],
                        ConSense::Ge,
                        0.0,
                    );
                    model.add_lin(
                        format!("wd_neg_{a}_{b}_{p}_{r}_{kk}"),
                        vec![(wd, 1.0), (zh1, 1.0), (zh2, -1.0)],
                        ConSense::Ge,
                        0.0,
                    );
                    let coeff = 2f64.powi(k as i32) * scale;
                    if instance.q == 1.0 {
                        epi_lin.push((wd, coeff));
                    } else {
                        epi_quad.push((wd, coeff));
                    }
                    if opts.cuts {
                        model.add_lin(
                            format!("sup_{a}_{b}_{p}_{r}_{kk}"),
                            vec![(zv, 1.0), (support[p][r], -1.0)],
                            ConSense::Le,
                            0.0,
                        );
                    }
                }
            }
        }
        // Gamma marginals in scaled units.
        for r in 0..mb {
            let mut terms = Vec::with_capacity(ma * omega);
            for p in 0..ma {
                for k in 0..omega {
                    terms.push((z[p][r][k], 2f64.powi(k as i32)));
                }
            }
            model.add_lin(format!("col_{a}_{b}_{r}"), terms, ConSense::Eq, ma as f64);
        }
        for p in 0..ma {
            let mut terms = Vec::with_capacity(mb * omega);
            for r in 0..mb {
                for k in 0..omega {
                    terms.push((z[p][r][k], 2f64.powi(k as i32)));
                }
            }
            model.add_lin(format!("row_{a}_{b}_{p}"), terms, ConSense::Eq, mb as f64);
        }
        if instance.q == 1.0 {
            let mut terms = epi_lin;
            terms.push((scaffold.nu, -1.0));
            model.add_lin(format!("epi_{a}_{b}"), terms, ConSense::Le, 0.0);
        } else {
            model.quadratic.push(super::QuadCon {
                name: format!("epi_{a}_{b}"),
                quad: epi_quad,
                lin: vec![(scaffold.nu, -1.0)],
                rhs: 0.0,
            });
        }
        if opts.cuts {
            let mut terms = Vec::with_capacity(ma * mb);
            for p in 0..ma {
                for r in 0..mb {
                    terms.push((support[p][r], 1.0));
                }
            }
            model.add_lin(
                format!("support_{a}_{b}"),
                terms,
                ConSense::Le,
                (ma + mb) as f64,
            );
        }
    }
    model.validate()?;
    Ok(model)
}

/// Complementary formulation: primal plan, LP duals, and big-M linearized
/// complementary-slackness indicators.
pub fn build_complementary(instance: &DfsoInstance, big_m: &BigM) -> Result<ModelIr> {
    if big_m.overflow {
        return Err(Error::resource(
            "complementary big-M overflowed; use smaller q or tighter utility bounds, \
             or choose the quantile/aggregate-quantile formulation",
        ));
    }
    let (mut model, scaffold) = begin("dfso_complementary", instance, big_m)?;
    let w = &scaffold.w;
    for (a, b) in pairs(instance) {
        let ga = instance.population.group(a).to_vec();
        let gb = instance.population.group(b).to_vec();
        let (ma, mb) = (ga.len(), gb.len());
        let cap = (1.0 / ma as f64).min(1.0 / mb as f64);
        let w_hat = big_m.w_hat(a, b);
        let mut mus = Vec::with_capacity(ma);
        let mut las = Vec::with_capacity(mb);
        for p in 0..ma {
            mus.push(model.add_var(
                format!("mu_{a}_{b}_{p}"),
                -w_hat,
                w_hat,
                VarKind::Continuous,
            )?);
        }
        for r in 0..mb {
            las.push(model.add_var(
                format!("la_{a}_{b}_{r}"),
                -w_hat,
                w_hat,
                VarKind::Continuous,
            )?);
        }
        let mut plan = vec![vec![VarId(0); mb]; ma];
        for (p, &i) in ga.iter().enumerate() {
            for (r, &j) in gb.iter().enumerate() {
                let gap_bound = big_m.per_scenario[i] + big_m.per_scenario[j];
                let pi =
                    model.add_var(format!("pi_{a}_{b}_{p}_{r}"), 0.0, cap, VarKind::Continuous)?;
                plan[p][r] = pi;
                let dv = model.add_var(
                    format!("dv_{a}_{b}_{p}_{r}"),
                    0.0,
                    gap_bound,
                    VarKind::Continuous,
                )?;
                model.add_lin(
                    format!("dv_pos_{a}_{b}_{p}_{r}"),
                    vec![(dv, 1.0), (w[i], -1.0), (w[j], 1.0)],
                    ConSense::Ge,
                    0.0,
                );
                model.add_lin(
                    format!("dv_neg_{a}_{b}_{p}_{r}"),
                    vec![(dv, 1.0), (w[i], 1.0), (w[j], -1.0)],
                    ConSense::Ge,
                    0.0,
                );
                let wq = model.add_var(
                    format!("wq_{a}_{b}_{p}_{r}"),
                    0.0,
                    crate::measures::pow_q(gap_bound, instance.q),
                    VarKind::Continuous,
                )?;
                if instance.q == 1.0 {
                    model.add_lin(
                        format!("pow_{a}_{b}_{p}_{r}"),
                        vec![(wq, 1.0), (dv, -1.0)],
                        ConSense::Ge,
                        0.0,
                    );
                } else {
                    model.quadratic.push(super::QuadCon {
                        name: format!("pow_{a}_{b}_{p}_{r}"),
                        quad: vec![(dv, 1.0)],
                        lin: vec![(wq, -1.0)],
                        rhs: 0.0,
                    });
                }
                let zc =
                    model.add_var(format!("zc_{a}_{b}_{p}_{r}"), 0.0, 1.0, VarKind::Binary)?;
                // Dual slack nonnegative and vanishing where z = 1.
                model.add_lin(
                    format!("slack_lo_{a}_{b}_{p}_{r}"),
                    vec![(wq, 1.0), (mus[p], -1.0), (las[r], -1.0)],
                    ConSense::Ge,
                    0.0,
                );
                model.add_lin(
                    format!("slack_hi_{a}_{b}_{p}_{r}"),
                    vec![(wq, 1.0), (mus[p], -1.0), (las[r], -1.0), (zc, w_hat)],
                    ConSense::Le,
                    w_hat,
                );
                // Plan mass only on indicated cells.
                model.add_lin(
                    format!("mass_{a}_{b}_{p}_{r}"),
                    vec![(pi, 1.0), (zc, -cap)],
                    ConSense::Le,
                    0.0,
                );
            }
        }
        for (p, _) in ga.iter().enumerate() {
            let terms: Vec<(VarId, f64)> = (0..mb).map(|r| (plan[p][r], 1.0)).collect();
            model.add_lin(format!("row_{a}_{b}_{p}"), terms, ConSense::Eq, 1.0 / ma as f64);
        }
        for r in 0..mb {
            let terms: Vec<(VarId, f64)> = (0..ma).map(|p| (plan[p][r], 1.0)).collect();
            model.add_lin(format!("col_{a}_{b}_{r}"), terms, ConSense::Eq, 1.0 / mb as f64);
        }
        // Strong-duality epigraph: dual objective <= nu.
        let mut dual: Vec<(VarId, f64)> = Vec::with_capacity(ma + mb + 1);
        dual.extend(las.iter().map(|&l| (l, 1.0 / mb as f64)));
        dual.extend(mus.iter().map(|&m| (m, 1.0 / ma as f64)));
        dual.push((scaffold.nu, -1.0));
        model.add_lin(format!("epi_{a}_{b}"), dual, ConSense::Le, 0.0);
    }
    model.validate()?;
    Ok(model)
}

/// Distinct levels `|i/m_a - j/m_b|` over all group pairs, ascending; the
/// KSD binary search iterates over this grid.
pub fn ksd_level_grid(m_a: usize, m_b: usize) -> Vec<Rational> {
    let mut levels = Vec::with_capacity((m_a + 1) * (m_b + 1));
    for i in 0..=m_a {
        for j in 0..=m_b {
            let v = Rational::new(i as i64, m_a as i64) - Rational::new(j as i64, m_b as i64);
            levels.push(v.abs());
        }
    }
    levels.sort();
    levels.dedup();
    levels
}

/// KSD sublevel model for a level on the exact grid: quantile sets for all
/// groups plus the interleaving rows, minimizing the mean cost (the binary
/// search compares the optimum against the efficiency threshold).
pub fn build_ksd_sublevel(
    instance: &DfsoInstance,
    big_m: &BigM,
    delta: Rational,
) -> Result<ModelIr> {
    // Level must be on the grid for some pair.
    let mut on_grid = false;
    for (a, b) in pairs(instance) {
        let grid =
            ksd_level_grid(instance.population.group_size(a), instance.population.group_size(b));
        if grid.binary_search(&delta).is_ok() {
            on_grid = true;
            break;
        }
    }
    if !on_grid || delta < Rational::zero() {
        return Err(Error::domain(format!(
            "level {delta} is not on the KSD level grid of any group pair"
        )));
    }

    let mut model = ModelIr::new("dfso_ksd_sublevel");
    let x = add_decision_vars(&mut model, instance)?;
    let w = add_utility_graph(&mut model, instance, &x)?;
    let t = add_quantile_sets(&mut model, instance, big_m, &w)?;

    for (a, b) in pairs(instance) {
        let ma = instance.population.group_size(a) as i64;
        let mb = instance.population.group_size(b) as i64;
        for i in 1..=ma {
            // Lower interleaving: t_{floor(mb (i/ma - delta)_+), b} <= t_{i, a}.
            let level = Rational::new(i, ma) - delta;
            let idx = if level <= Rational::zero() {
                0
            } else {
                (level * Rational::from_integer(mb)).floor().to_integer()
            };
            if !(0..=mb + 1).contains(&idx) {
                return Err(Error::domain(format!(
                    "interleaving index {idx} outside [0, {}]",
                    mb + 1
                )));
            }
            if idx >= 1 {
                model.add_lin(
                    format!("ksd_lo_{a}_{b}_{i}"),
                    vec![(t[b][(idx - 1) as usize], 1.0), (t[a][(i - 1) as usize], -1.0)],
                    ConSense::Le,
                    0.0,
                );
            }
        }
        for i in 0..ma {
            // Upper interleaving: t_{i+1, a} <= t_{floor(mb min(i/ma + delta, 1)) + 1, b}.
            let level = (Rational::new(i, ma) + delta).min(Rational::from_integer(1));
            let idx = (level * Rational::from_integer(mb)).floor().to_integer() + 1;
            if !(0..=mb + 1).contains(&idx) {
                return Err(Error::domain(format!(
                    "interleaving index {idx} outside [0, {}]",
                    mb + 1
                )));
            }
            if idx <= mb {
                model.add_lin(
                    format!("ksd_hi_{a}_{b}_{i}"),
                    vec![(t[a][i as usize], 1.0), (t[b][(idx - 1) as usize], -1.0)],
                    ConSense::Le,
                    0.0,
                );
            }
        }
    }

    // Objective: minimize the mean cost via an epigraph variable.
    let cost_bound = cost_upper_bound(instance);
    let nu = model.add_var("nu", -cost_bound, cost_bound, VarKind::Continuous)?;
    model.objective = vec![(nu, 1.0)];
    add_cost_epigraph(&mut model, instance, &x, nu)?;
    model.validate()?;
    Ok(model)
}

fn cost_upper_bound(instance: &DfsoInstance) -> f64 {
    let m = instance.population.len() as f64;
    let mut total = 1.0;
    for (i, s) in instance.population.scenarios().iter().enumerate() {
        let y = instance.efficiency.responses.get(i).copied().unwrap_or(0.0);
        let (lo, hi) =
            crate::instance::affine_range(s, -y, &instance.feasible.lower, &instance.feasible.upper);
        let mag = lo.abs().max(hi.abs());
        total += match instance.efficiency.kind {
            CostKind::SquaredDeviation => mag * mag / m,
            _ => mag / m,
        };
    }
    total
}

/// `mean cost <= nu` rows for the LP-representable cost kinds.
fn add_cost_epigraph(
    model: &mut ModelIr,
    instance: &DfsoInstance,
    x: &[VarId],
    nu: VarId,
) -> Result<()> {
    let m = instance.population.len() as f64;
    match instance.efficiency.kind {
        CostKind::LinearCost | CostKind::NegValue => {
            let sign = if instance.efficiency.kind == CostKind::NegValue { -1.0 } else { 1.0 };
            let mut coeffs = vec![0.0; x.len()];
            for s in instance.population.scenarios() {
                for (j, &v) in s.iter().enumerate() {
                    coeffs[j] += sign * v / m;
                }
            }
            let mut terms: Vec<(VarId, f64)> = coeffs
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0.0)
                .map(|(j, &c)| (x[j], c))
                .collect();
            terms.push((nu, -1.0));
            model.add_lin("cost_epi", terms, ConSense::Le, 0.0);
        }
        CostKind::AbsDeviation => {
            let mut es = Vec::with_capacity(instance.population.len());
            for (i, y) in instance.efficiency.responses.iter().enumerate() {
                let xi = instance.population.scenario(i);
                let (lo, hi) = crate::instance::affine_range(
                    xi,
                    -y,
                    &instance.feasible.lower,
                    &instance.feasible.upper,
                );
                let bound = lo.abs().max(hi.abs());
                let e = model.add_var(format!("e_{i}"), 0.0, bound, VarKind::Continuous)?;
                let pos: Vec<(VarId, f64)> = std::iter::once((e, 1.0))
                    .chain(
                        xi.iter()
                            .enumerate()
                            .filter(|(_, &c)| c != 0.0)
                            .map(|(j, &c)| (x[j], -c)),
                    )
                    .collect();
                model.add_lin(format!("abs_pos_{i}"), pos, ConSense::Ge, -y);
                let neg: Vec<(VarId, f64)> = std::iter::once((e, 1.0))
                    .chain(
                        xi.iter()
                            .enumerate()
                            .filter(|(_, &c)| c != 0.0)
                            .map(|(j, &c)| (x[j], c)),
                    )
                    .collect();
                model.add_lin(format!("abs_neg_{i}"), neg, ConSense::Ge, *y);
                es.push(e);
            }
            let mut terms: Vec<(VarId, f64)> = es.iter().map(|&e| (e, 1.0 / m)).collect();
            terms.push((nu, -1.0));
            model.add_lin("cost_epi", terms, ConSense::Le, 0.0);
        }
        CostKind::SquaredDeviation => {
            let mut rs = Vec::with_capacity(instance.population.len());
            for (i, y) in instance.efficiency.responses.iter().enumerate() {
                let xi = instance.population.scenario(i);
                let (lo, hi) = crate::instance::affine_range(
                    xi,
                    -y,
                    &instance.feasible.lower,
                    &instance.feasible.upper,
                );
                let r = model.add_var(format!("r_{i}"), lo, hi, VarKind::Continuous)?;
                let terms: Vec<(VarId, f64)> = std::iter::once((r, 1.0))
                    .chain(
                        xi.iter()
                            .enumerate()
                            .filter(|(_, &c)| c != 0.0)
                            .map(|(j, &c)| (x[j], -c)),
                    )
                    .collect();
                model.add_lin(format!("resid_{i}"), terms, ConSense::Eq, -y);
                rs.push(r);
            }
            model.quadratic.push(super::QuadCon {
                name: "cost_epi".into(),
                quad: rs.iter().map(|&r| (r, 1.0 / m)).collect(),
                lin: vec![(nu, -1.0)],
                rhs: 0.0,
            });
        }
        CostKind::NegGeoMeanLog => {
            return Err(Error::unsupported(
                "the geometric-mean cost is not linear/quadratic representable",
            ));
        }
    }
    Ok(())
}

/// Analytic continuous-relaxation values: zero for the discretized and
/// complementary formulations; the last-cell quantile-gap expression for the
/// quantile formulation; the mean-gap (Jensen integrand) expression for the
/// aggregate quantile formulation. The nonzero floors are evaluated by
/// minimizing over the supplied candidate decisions.
pub fn relaxation_floor(
    instance: &DfsoInstance,
    formulation: super::Formulation,
    candidates: &[Vec<f64>],
) -> Result<f64> {
    use super::Formulation;
    match formulation {
        Formulation::Discretized | Formulation::Complementary => Ok(0.0),
        Formulation::Quantile => {
            let mut best = f64::INFINITY;
            for x in candidates {
                let dists = instance.group_dists(x)?;
                let mut worst = 0.0f64;
                for (a, b) in pairs(instance) {
                    let grid = merged_grid(dists[a].len(), dists[b].len())?;
                    let last = grid.cells().last().expect("nonempty grid");
                    let gap = dists[a].max() - dists[b].max();
                    worst = worst.max(
                        last.width.to_f64().expect("small rational")
                            * crate::measures::pow_q(gap, instance.q),
                    );
                }
                best = best.min(worst);
            }
            Ok(best)
        }
        Formulation::AggregateQuantile => {
            let mut best = f64::INFINITY;
            for x in candidates {
                let dists = instance.group_dists(x)?;
                let means: Vec<f64> = dists
                    .iter()
                    .map(|d| d.values().iter().sum::<f64>() / d.len() as f64)
                    .collect();
                let mut worst = 0.0f64;
                for (a, b) in pairs(instance) {
                    worst = worst.max(crate::measures::pow_q(means[a] - means[b], instance.q));
                }
                best = best.min(worst);
            }
            Ok(best)
        }
        Formulation::Vanilla | Formulation::KsdSublevel => Err(Error::unsupported(
            "relaxation floors are defined for the four exact epigraph formulations",
        )),
    }
}
