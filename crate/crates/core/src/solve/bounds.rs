//! Jensen and Gelbrich lower bounds for the Wasserstein fairness measure.

use super::am::{append_band, efficiency_optimum};
use super::kernel::{solve_convex, Affine, ConvexRow, RowSense};
use super::moments::GroupMoments;
use super::IterRecord;
use crate::instance::{affine_range, base_program, solve_v_star, AffineUtility, DfsoInstance};
use crate::{Error, Result};
use std::time::Instant;

fn linear_utility(instance: &DfsoInstance) -> Result<&AffineUtility> {
    match &instance.utility {
        crate::instance::UtilityModel::Linear(u) => Ok(u),
        _ => Err(Error::unsupported("moment bounds require a linear utility")),
    }
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

fn ensure_v_star(instance: &DfsoInstance) -> Result<DfsoInstance> {
    let mut inst = instance.clone();
    if inst.efficiency.v_star.is_none() && inst.efficiency.epsilon.is_finite() {
        inst.efficiency.v_star = Some(solve_v_star(&inst)?);
    }
    Ok(inst)
}

/// Jensen bound: minimizes the largest pairwise group-mean utility gap over
/// the band, returning the optimum raised to the `q`-th power and its
/// attaining decision.
pub fn jensen_bound(instance: &DfsoInstance, moments: &GroupMoments) -> Result<(f64, Vec<f64>)> {
    let instance = ensure_v_star(instance)?;
    let utility = linear_utility(&instance)?;
    let mut prog = base_program(&instance.feasible)?;
    append_band(&mut prog, &instance)?;

    // Gap magnitude bound for the epigraph variable.
    let mut tau_ub = 1.0f64;
    let mut gap_forms = Vec::new();
    for (a, b) in pairs(&instance) {
        let dmu: Vec<f64> = moments.means[a]
            .iter()
            .zip(&moments.means[b])
            .map(|(x, y)| x - y)
            .collect();
        let (c, d) = utility.pullback(&dmu);
        let (lo, hi) = affine_range(&c, d, &instance.feasible.lower, &instance.feasible.upper);
        tau_ub = tau_ub.max(lo.abs().max(hi.abs()));
        gap_forms.push((a, b, c, d));
    }
    let tau = prog.add_var(0.0, tau_ub, 1.0);
    for (a, b, c, d) in &gap_forms {
        let mut pos: Vec<(usize, f64)> = crate::instance::sparse(c);
        pos.push((tau, -1.0));
        prog.linear.push(super::kernel::LinearRow {
            coeffs: pos,
            sense: RowSense::Le,
            rhs: -d,
        });
        let mut neg: Vec<(usize, f64)> =
            crate::instance::sparse(&c.iter().map(|v| -v).collect::<Vec<_>>());
        neg.push((tau, -1.0));
        prog.linear.push(super::kernel::LinearRow {
            coeffs: neg,
            sense: RowSense::Le,
            rhs: *d,
        });
        let _ = (a, b);
    }
    let flags = {
        let mut f = instance.feasible.integer_flags();
        f.resize(prog.n, false);
        f
    };
    let (x, value) = if flags.iter().any(|&b| b) {
        let sol = super::bb::solve_mixed(&prog, &flags, 100_000)?;
        (sol.x, sol.objective)
    } else {
        let sol = solve_convex(&prog)?;
        (sol.x, sol.objective)
    };
    Ok((crate::measures::pow_q(value.max(0.0), instance.q), x[..instance.n()].to_vec()))
}

/// Gelbrich lower bound on `W_2^2` at a fixed decision: the largest pairwise
/// mean-gap square plus standard-deviation-gap square along `r(x)`.
pub fn gelbrich_value(
    instance: &DfsoInstance,
    moments: &GroupMoments,
    x: &[f64],
) -> Result<f64> {
    let utility = linear_utility(instance)?;
    let r = utility.r_of_x(x);
    let kappa = r.len();
    let mut worst = 0.0f64;
    for (a, b) in pairs(instance) {
        let dm: f64 = moments.means[a]
            .iter()
            .zip(&moments.means[b])
            .zip(&r)
            .map(|((ma, mb), rk)| (ma - mb) * rk)
            .sum();
        let quad = |g: usize| -> f64 {
            let cov = &moments.covariances[g];
            let mut v = 0.0;
            for p in 0..kappa {
                for q in 0..kappa {
                    v += r[p] * cov[p * kappa + q] * r[q];
                }
            }
            if v < 0.0 {
                debug_assert!(v > -1e-14, "quadratic form {v} too negative");
                0.0
            } else {
                v
            }
        };
        let sd_gap = quad(a).sqrt() - quad(b).sqrt();
        worst = worst.max(dm * dm + sd_gap * sd_gap);
    }
    Ok(worst)
}

/// Alternating minimization for the Gelbrich bound program: closed-form
/// conjugate variables at the incumbent, then a convex step in `(x, z, nu)`.
/// Returns the bound value at the final decision, the decision, and the
/// objective trace.
pub fn gelbrich_am(
    instance: &DfsoInstance,
    moments: &GroupMoments,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>, Vec<IterRecord>)> {
    if instance.q != 2.0 {
        return Err(Error::unsupported("the Gelbrich bound applies to q = 2"));
    }
    let instance = ensure_v_star(instance)?;
    let utility = linear_utility(&instance)?.clone();
    let start = Instant::now();
    let groups = instance.population.group_count();

    // Affine forms of every z coordinate and their ranges.
    let mut z_forms: Vec<Vec<(Vec<f64>, f64)>> = Vec::with_capacity(groups);
    for g in 0..groups {
        let f = &moments.factors[g];
        let mut coords = Vec::with_capacity(f.rank);
        for k in 0..f.rank {
            coords.push(utility.pullback(&f.column(k)));
        }
        z_forms.push(coords);
    }
    let z_at = |g: usize, x: &[f64]| -> Vec<f64> {
        z_forms[g]
            .iter()
            .map(|(c, d)| c.iter().zip(x).map(|(cj, xj)| cj * xj).sum::<f64>() + d)
            .collect()
    };

    let mut x = efficiency_optimum(&instance)?;
    let mut best = gelbrich_value(&instance, moments, &x)?;
    let mut trace = vec![IterRecord {
        iter: 0,
        objective: best,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }];

    for iter in 1..=max_iter {
        // Closed-form conjugate block at the incumbent.
        let zs: Vec<Vec<f64>> = (0..groups).map(|g| z_at(g, &x)).collect();
        let norms: Vec<f64> =
            zs.iter().map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        struct PairBlock {
            a: usize,
            b: usize,
            w: f64,
            alpha_a: Vec<f64>,
            alpha_b: Vec<f64>,
        }
        let blocks: Vec<PairBlock> = pairs(&instance)
            .into_iter()
            .map(|(a, b)| {
                let w = norms[a] + norms[b];
                let scale = |g: usize| -> Vec<f64> {
                    if norms[g] <= 1e-14 {
                        vec![0.0; zs[g].len()]
                    } else {
                        zs[g].iter().map(|v| w / norms[g] * v).collect()
                    }
                };
                PairBlock { a, b, w, alpha_a: scale(a), alpha_b: scale(b) }
            })
            .collect();

        // Convex step: minimize nu over (x, z) with the conjugate fixed.
        let mut prog = base_program(&instance.feasible)?;
        append_band(&mut prog, &instance)?;
        let mut z_vars: Vec<Vec<usize>> = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut vars = Vec::with_capacity(z_forms[g].len());
            for (k, (c, d)) in z_forms[g].iter().enumerate() {
                let (lo, hi) =
                    affine_range(c, *d, &instance.feasible.lower, &instance.feasible.upper);
                let v = prog.add_var(lo, hi, 0.0);
                let mut coeffs: Vec<(usize, f64)> = crate::instance::sparse(c);
                coeffs.push((v, -1.0));
                prog.linear.push(super::kernel::LinearRow {
                    coeffs,
                    sense: RowSense::Eq,
                    rhs: -d,
                });
                vars.push(v);
                let _ = k;
            }
            z_vars.push(vars);
        }
        // nu bound: generous box from the coordinate ranges.
        let mut nu_ub = 1.0f64;
        for block in &blocks {
            let norm_cap = |g: usize| -> f64 {
                z_forms[g]
                    .iter()
                    .map(|(c, d)| {
                        let (lo, hi) =
                            affine_range(c, *d, &instance.feasible.lower, &instance.feasible.upper);
                        lo.abs().max(hi.abs()).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            let dmu: Vec<f64> = moments.means[block.a]
                .iter()
                .zip(&moments.means[block.b])
                .map(|(p, q)| p - q)
                .collect();
            let (c, d) = utility.pullback(&dmu);
            let (lo, hi) = affine_range(&c, d, &instance.feasible.lower, &instance.feasible.upper);
            let dm_cap = lo.abs().max(hi.abs());
            let caps = norm_cap(block.a) + norm_cap(block.b);
            nu_ub = nu_ub.max(dm_cap * dm_cap + 2.0 * caps * caps + block.w * block.w + 1.0);
        }
        let nu = prog.add_var(0.0, nu_ub, 1.0);
        for block in &blocks {
            let dmu: Vec<f64> = moments.means[block.a]
                .iter()
                .zip(&moments.means[block.b])
                .map(|(p, q)| p - q)
                .collect();
            let (c, d) = utility.pullback(&dmu);
            let mut terms =
                vec![Affine { coeffs: crate::instance::sparse(&c), constant: d }];
            let mut lin: Vec<(usize, f64)> = vec![(nu, -1.0)];
            let sqrt2 = std::f64::consts::SQRT_2;
            for (k, &zv) in z_vars[block.a].iter().enumerate() {
                terms.push(Affine { coeffs: vec![(zv, sqrt2)], constant: 0.0 });
                lin.push((zv, -2.0 * block.alpha_a[k]));
            }
            for (k, &zv) in z_vars[block.b].iter().enumerate() {
                terms.push(Affine { coeffs: vec![(zv, sqrt2)], constant: 0.0 });
                lin.push((zv, -2.0 * block.alpha_b[k]));
            }
            prog.convex.push(ConvexRow::QuadSum {
                terms,
                lin,
                constant: block.w * block.w,
            });
        }
        let flags = {
            let mut f = instance.feasible.integer_flags();
            f.resize(prog.n, false);
            f
        };
        let sol_x = if flags.iter().any(|&b| b) {
            super::bb::solve_mixed(&prog, &flags, 100_000)?.x
        } else {
            solve_convex(&prog)?.x
        };
        let candidate_x = sol_x[..instance.n()].to_vec();
        let candidate = gelbrich_value(&instance, moments, &candidate_x)?;
        if candidate > best + 1e-12 {
            break;
        }
        let improvement = best - candidate;
        x = candidate_x;
        best = candidate;
        trace.push(IterRecord {
            iter,
            objective: best,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if improvement < tol * best.abs().max(1.0) {
            break;
        }
    }
    Ok((best, x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{
        CostKind, EfficiencyModel, FeasibleSet, GroupedPopulation, UtilityModel,
    };
    use crate::solve::moments::group_moments;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn instance_2d(
        scenarios: Vec<Vec<f64>>,
        labels: Vec<&str>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        q: f64,
    ) -> DfsoInstance {
        let n = lower.len();
        DfsoInstance::new(
            GroupedPopulation::new(scenarios, labels.iter().map(|s| s.to_string()).collect())
                .unwrap(),
            UtilityModel::Linear(AffineUtility::dot(n)),
            EfficiencyModel::unconstrained(CostKind::LinearCost, vec![]),
            FeasibleSet::boxed(lower, upper).unwrap(),
            q,
        )
        .unwrap()
    }

    #[test]
    fn jensen_zero_for_equal_means() {
        let inst = instance_2d(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.5, 0.5]],
            vec!["a", "a", "b", "b"],
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
            2.0,
        );
        let m = group_moments(&inst.population).unwrap();
        let (v, _) = jensen_bound(&inst, &m).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn jensen_null_direction() {
        // Single scalar decision, mean gap c x: x = 0 kills the bound.
        let inst = instance_2d(
            vec![vec![1.0], vec![3.0]],
            vec!["a", "b"],
            vec![-1.0],
            vec![1.0],
            2.0,
        );
        let m = group_moments(&inst.population).unwrap();
        let (v, x) = jensen_bound(&inst, &m).unwrap();
        assert!(v < 1e-12);
        assert!(x[0].abs() < 1e-7);
    }

    #[test]
    fn jensen_below_objective_at_its_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scenarios: Vec<Vec<f64>> =
            (0..8).map(|_| (0..2).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let labels = vec!["a", "a", "a", "a", "b", "b", "b", "b"];
        let inst =
            instance_2d(scenarios, labels, vec![0.2, 0.2], vec![1.0, 1.0], 2.0);
        let m = group_moments(&inst.population).unwrap();
        let (v, x) = jensen_bound(&inst, &m).unwrap();
        let wd = inst.wd_objective(&x).unwrap();
        assert!(v <= wd + 1e-9, "jensen {v} vs wd {wd}");
    }

    #[test]
    fn gelbrich_value_examples() {
        // Identical moments: zero.
        let inst = instance_2d(
            vec![vec![1.0], vec![2.0], vec![1.0], vec![2.0]],
            vec!["a", "a", "b", "b"],
            vec![-1.0],
            vec![1.0],
            2.0,
        );
        let m = group_moments(&inst.population).unwrap();
        assert_eq!(gelbrich_value(&inst, &m, &[0.7]).unwrap(), 0.0);

        // Sigma_a = 4 Sigma_b with equal means: gap (2s - s)^2 = s^2 where
        // s^2 = r' Sigma_b r. Scenarios (0, 4) vs (1, 3): means 2, variances
        // 4 and 1.
        let inst2 = instance_2d(
            vec![vec![0.0], vec![4.0], vec![1.0], vec![3.0]],
            vec!["a", "a", "b", "b"],
            vec![-2.0],
            vec![2.0],
            2.0,
        );
        let m2 = group_moments(&inst2.population).unwrap();
        // r(x) = x; at x = 1: r'S_a r = 4, r'S_b r = 1 -> (2 - 1)^2 = 1.
        assert_relative_eq!(gelbrich_value(&inst2, &m2, &[1.0]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gelbrich_value_lower_bounds_wasserstein() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let na = rng.random_range(2..8usize);
            let nb = rng.random_range(2..8usize);
            let mut scenarios = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..na {
                scenarios.push(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
                labels.push("a");
            }
            for _ in 0..nb {
                scenarios.push(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
                labels.push("b");
            }
            let inst =
                instance_2d(scenarios, labels, vec![-1.0, -1.0], vec![1.0, 1.0], 2.0);
            let m = group_moments(&inst.population).unwrap();
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let g = gelbrich_value(&inst, &m, &x).unwrap();
            let wd = inst.wd_objective(&x).unwrap();
            assert!(g <= wd + 1e-9, "gelbrich {g} vs wd {wd}");
        }
    }

    #[test]
    fn gelbrich_am_matches_value_at_returned_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scenarios: Vec<Vec<f64>> =
            (0..10).map(|_| (0..2).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let labels = vec!["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"];
        let inst = instance_2d(scenarios, labels, vec![0.1, 0.1], vec![1.0, 1.0], 2.0);
        let m = group_moments(&inst.population).unwrap();
        let (v, x, trace) = gelbrich_am(&inst, &m, 1e-8, 100).unwrap();
        assert_relative_eq!(v, gelbrich_value(&inst, &m, &x).unwrap(), epsilon = 1e-8);
        for w in trace.windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-9);
        }
        // Identical moments converge to zero in one step.
        let sym = instance_2d(
            vec![vec![1.0], vec![2.0], vec![1.0], vec![2.0]],
            vec!["a", "a", "b", "b"],
            vec![-1.0],
            vec![1.0],
            2.0,
        );
        let ms = group_moments(&sym.population).unwrap();
        let (v0, _, _) = gelbrich_am(&sym, &ms, 1e-8, 50).unwrap();
        assert!(v0 < 1e-12);
    }
}
