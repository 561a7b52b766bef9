//! Desk-scale branch and bound over the convex kernel for programs with
//! integrality flags. Deterministic: branches on the most fractional
//! variable (lowest index on ties), explores the floor child first.

use crate::solve::kernel::{solve_convex, ConvexProgram, KernelStatus};
use crate::{Error, Result};

const INT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// False when the node limit was hit before the tree was exhausted.
    pub certified: bool,
}

pub fn solve_mixed(
    prog: &ConvexProgram,
    integer: &[bool],
    node_limit: usize,
) -> Result<MixedSolution> {
    assert_eq!(integer.len(), prog.n);
    if !integer.iter().any(|&b| b) {
        let s = solve_convex(prog)?;
        return Ok(MixedSolution {
            x: s.x,
            objective: s.objective,
            certified: s.status == KernelStatus::Optimal,
        });
    }

    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut nodes = 0usize;
    let mut exhausted = true;
    // Stack of (lower bounds, upper bounds) overrides.
    let mut stack: Vec<(Vec<f64>, Vec<f64>)> = vec![(prog.lower.clone(), prog.upper.clone())];

    while let Some((lo, hi)) = stack.pop() {
        if nodes >= node_limit {
            exhausted = false;
            break;
        }
        nodes += 1;
        let mut node = prog.clone();
        node.lower = lo;
        node.upper = hi;
        let relax = match solve_convex(&node) {
            Ok(s) => s,
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        };
        if let Some((_, best)) = &incumbent {
            if relax.objective >= best - 1e-9 {
                continue;
            }
        }
        // Most fractional integer variable.
        let mut branch: Option<(usize, f64)> = None;
        let mut best_frac = INT_TOL;
        for j in 0..prog.n {
            if !integer[j] {
                continue;
            }
            let frac = (relax.x[j] - relax.x[j].round()).abs();
            if frac > best_frac {
                best_frac = frac;
                branch = Some((j, relax.x[j]));
            }
        }
        match branch {
            None => {
                // Integral: round exactly and keep as incumbent if better.
                let mut x = relax.x.clone();
                for j in 0..prog.n {
                    if integer[j] {
                        x[j] = x[j].round();
                    }
                }
                let better = incumbent
                    .as_ref()
                    .map(|(_, b)| relax.objective < b - 1e-12)
                    .unwrap_or(true);
                if better {
                    incumbent = Some((x, relax.objective));
                }
            }
            Some((j, v)) => {
                let mut up_lo = node.lower.clone();
                up_lo[j] = v.ceil();
                let mut down_hi = node.upper.clone();
                down_hi[j] = v.floor();
                // Push ceil child first so the floor child is explored first;
                // children with crossed bounds are infeasible outright.
                if up_lo[j] <= node.upper[j] {
                    stack.push((up_lo, node.upper.clone()));
                }
                if down_hi[j] >= node.lower[j] {
                    stack.push((node.lower.clone(), down_hi));
                }
            }
        }
    }

    match incumbent {
        Some((x, objective)) => Ok(MixedSolution { x, objective, certified: exhausted }),
        None => {
            if exhausted {
                Err(Error::infeasible("no integer-feasible point in branch and bound"))
            } else {
                Err(Error::resource(format!(
                    "branch and bound node limit {node_limit} hit with no incumbent"
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::kernel::{LinearRow, RowSense};

    #[test]
    fn tiny_knapsack() {
        // max 2a + 3b s.t. a + 2b <= 2, binary: optimum picks b (value 3).
        let mut p = ConvexProgram::new(2, vec![0.0, 0.0], vec![1.0, 1.0]);
        p.objective = vec![-2.0, -3.0];
        p.linear.push(LinearRow {
            coeffs: vec![(0, 1.0), (1, 2.0)],
            sense: RowSense::Le,
            rhs: 2.0,
        });
        let s = solve_mixed(&p, &[true, true], 1000).unwrap();
        assert!(s.certified);
        assert_eq!(s.x, vec![0.0, 1.0]);
        assert!((s.objective + 3.0).abs() < 1e-9);
    }

    #[test]
    fn integer_infeasible() {
        // x binary with 0.25 <= x <= 0.75 has no integer point.
        let mut p = ConvexProgram::new(1, vec![0.25], vec![0.75]);
        p.objective = vec![1.0];
        assert!(matches!(
            solve_mixed(&p, &[true], 100),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn mixed_integer_with_continuous() {
        // min x + y, x integer in [0,3], y in [0.3, 5], x + y >= 2.4.
        let mut p = ConvexProgram::new(2, vec![0.0, 0.3], vec![3.0, 5.0]);
        p.objective = vec![1.0, 1.0];
        p.linear.push(LinearRow {
            coeffs: vec![(0, 1.0), (1, 1.0)],
            sense: RowSense::Ge,
            rhs: 2.4,
        });
        let s = solve_mixed(&p, &[true, false], 1000).unwrap();
        assert!((s.objective - 2.4).abs() < 1e-8, "obj {}", s.objective);
        assert!((s.x[0] - s.x[0].round()).abs() < 1e-9);
    }
}
