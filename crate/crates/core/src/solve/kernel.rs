//! Internal convex kernel: linear programs go straight to the dense simplex;
//! convex rows (weighted squares, absolute sums, negative log sums) are
//! handled by outer linearization — gradient cuts accumulated into the LP
//! master, with inactive cuts dropped to keep the master small.
//!
//! The returned point is feasible within `feas_tol` and its objective equals
//! the final master optimum, which lower-bounds the true optimum, so the
//! optimality error is controlled by the same tolerance.

use crate::solve::simplex::{solve_lp, LpProblem, LpRow, LpStatus, Sense};
use crate::{Error, Result};

/// Affine expression `coeffs . v + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * v[j]).sum::<f64>() + self.constant
    }
}

/// A convex constraint `g(v) <= 0`.
#[derive(Debug, Clone)]
pub enum ConvexRow {
    /// `sum_k (a_k . v + b_k)^2 + lin . v + c <= 0`.
    QuadSum { terms: Vec<Affine>, lin: Vec<(usize, f64)>, constant: f64 },
    /// `sum_k |a_k . v + b_k| + lin . v + c <= 0`.
    AbsSum { terms: Vec<Affine>, lin: Vec<(usize, f64)>, constant: f64 },
    /// `-sum_k w_k ln(v_{i_k}) + lin . v + c <= 0` with `w_k > 0`; the box
    /// must keep each `v_{i_k}` strictly positive.
    NegLogSum { terms: Vec<(usize, f64)>, lin: Vec<(usize, f64)>, constant: f64 },
}

impl ConvexRow {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            ConvexRow::QuadSum { terms, lin, constant } => {
                let q: f64 = terms.iter().map(|t| t.eval(v).powi(2)).sum();
                q + dot(lin, v) + constant
            }
            ConvexRow::AbsSum { terms, lin, constant } => {
                let q: f64 = terms.iter().map(|t| t.eval(v).abs()).sum();
                q + dot(lin, v) + constant
            }
            ConvexRow::NegLogSum { terms, lin, constant } => {
                let q: f64 = terms.iter().map(|&(j, w)| -w * v[j].max(1e-300).ln()).sum();
                q + dot(lin, v) + constant
            }
        }
    }

    /// Subgradient at `v`, dense over `n` variables.
    fn subgradient(&self, v: &[f64], n: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        match self {
            ConvexRow::QuadSum { terms, lin, .. } => {
                for t in terms {
                    let val = t.eval(v);
                    for &(j, c) in &t.coeffs {
                        g[j] += 2.0 * val * c;
                    }
                }
                for &(j, c) in lin {
                    g[j] += c;
                }
            }
            ConvexRow::AbsSum { terms, lin, .. } => {
                for t in terms {
                    let s = t.eval(v).signum();
                    if s != 0.0 {
                        for &(j, c) in &t.coeffs {
                            g[j] += s * c;
                        }
                    }
                }
                for &(j, c) in lin {
                    g[j] += c;
                }
            }
            ConvexRow::NegLogSum { terms, lin, .. } => {
                for &(j, w) in terms {
                    g[j] += -w / v[j].max(1e-12);
                }
                for &(j, c) in lin {
                    g[j] += c;
                }
            }
        }
        g
    }
}

fn dot(sparse: &[(usize, f64)], v: &[f64]) -> f64 {
    sparse.iter().map(|&(j, c)| c * v[j]).sum()
}

/// A convex program over a finite box: linear objective, explicit linear
/// rows, and convex rows.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub n: usize,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub linear: Vec<LinearRow>,
    pub convex: Vec<ConvexRow>,
}

#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

impl ConvexProgram {
    pub fn new(n: usize, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), n);
        assert_eq!(upper.len(), n);
        assert!(
            lower.iter().chain(upper.iter()).all(|b| b.is_finite()),
            "kernel programs need finite variable boxes"
        );
        ConvexProgram {
            n,
            objective: vec![0.0; n],
            lower,
            upper,
            linear: Vec::new(),
            convex: Vec::new(),
        }
    }

    /// Appends a variable with the given bounds; returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        assert!(lower.is_finite() && upper.is_finite());
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(cost);
        self.n += 1;
        self.n - 1
    }

    pub fn max_linear_violation(&self, v: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.linear {
            let lhs = dot(&row.coeffs, v);
            let viol = match row.sense {
                RowSense::Le => lhs - row.rhs,
                RowSense::Ge => row.rhs - lhs,
                RowSense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for j in 0..self.n {
            worst = worst.max(self.lower[j] - v[j]).max(v[j] - self.upper[j]);
        }
        worst
    }

    pub fn max_convex_violation(&self, v: &[f64]) -> f64 {
        self.convex.iter().map(|r| r.eval(v)).fold(0.0f64, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelStatus {
    Optimal,
    /// Cut or simplex iteration budget exhausted; solution is best effort.
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct KernelSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: KernelStatus,
}

pub struct KernelOptions {
    pub feas_tol: f64,
    pub max_outer: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { feas_tol: 1e-9, max_outer: 4000 }
    }
}

struct Cut {
    row: LpRow,
    idle: usize,
}

/// Solves the convex program; deterministic.
pub fn solve_convex(prog: &ConvexProgram) -> Result<KernelSolution> {
    solve_convex_opts(prog, &KernelOptions::default())
}

pub fn solve_convex_opts(prog: &ConvexProgram, opts: &KernelOptions) -> Result<KernelSolution> {
    let base_rows: Vec<LpRow> = prog
        .linear
        .iter()
        .map(|r| LpRow {
            coeffs: r.coeffs.clone(),
            sense: match r.sense {
                RowSense::Le => Sense::Le,
                RowSense::Ge => Sense::Ge,
                RowSense::Eq => Sense::Eq,
            },
            rhs: r.rhs,
        })
        .collect();

    let mut cuts: Vec<Cut> = Vec::new();
    let scale = 1.0
        + prog
            .objective
            .iter()
            .zip(prog.upper.iter().zip(&prog.lower))
            .map(|(c, (u, l))| c.abs() * u.abs().max(l.abs()))
            .sum::<f64>();

    for outer in 0..opts.max_outer {
        let mut rows = base_rows.clone();
        rows.extend(cuts.iter().map(|c| c.row.clone()));
        let lp = LpProblem {
            n: prog.n,
            c: prog.objective.clone(),
            lower: prog.lower.clone(),
            upper: prog.upper.clone(),
            rows,
        };
        let sol = solve_lp(&lp);
        match sol.status {
            LpStatus::Infeasible => {
                return Err(Error::infeasible("kernel master LP is infeasible"))
            }
            LpStatus::Unbounded => {
                return Err(Error::domain("kernel master LP unbounded despite box bounds"))
            }
            LpStatus::IterLimit => {
                return Ok(KernelSolution {
                    x: sol.x,
                    objective: sol.objective,
                    status: KernelStatus::IterLimit,
                })
            }
            LpStatus::Optimal => {}
        }
        if prog.convex.is_empty() {
            return Ok(KernelSolution {
                x: sol.x,
                objective: sol.objective,
                status: KernelStatus::Optimal,
            });
        }

        // Cut management bookkeeping.
        for cut in &mut cuts {
            let slack = cut.row.rhs - dot(&cut.row.coeffs, &sol.x);
            if slack > 1e-7 * scale {
                cut.idle += 1;
            } else {
                cut.idle = 0;
            }
        }

        let mut worst = 0.0f64;
        for row in &prog.convex {
            let g = row.eval(&sol.x);
            worst = worst.max(g);
            if g > opts.feas_tol * 0.25 {
                let grad = row.subgradient(&sol.x, prog.n);
                // g(x) + grad.(v - x) <= 0  =>  grad.v <= grad.x - g(x)
                let gx = grad.iter().zip(&sol.x).map(|(a, b)| a * b).sum::<f64>();
                let coeffs: Vec<(usize, f64)> =
                    grad.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(j, &c)| (j, c)).collect();
                cuts.push(Cut {
                    row: LpRow { coeffs, sense: Sense::Le, rhs: gx - g },
                    idle: 0,
                });
            }
        }
        if worst <= opts.feas_tol {
            return Ok(KernelSolution {
                x: sol.x,
                objective: sol.objective,
                status: KernelStatus::Optimal,
            });
        }
        if cuts.len() > 350 {
            cuts.retain(|c| c.idle < 10);
        }
        let _ = outer;
    }

    // Budget exhausted: re-solve one last master and report best effort.
    let mut rows = base_rows;
    rows.extend(cuts.into_iter().map(|c| c.row));
    let lp = LpProblem {
        n: prog.n,
        c: prog.objective.clone(),
        lower: prog.lower.clone(),
        upper: prog.upper.clone(),
        rows,
    };
    let sol = solve_lp(&lp);
    Ok(KernelSolution { x: sol.x, objective: sol.objective, status: KernelStatus::IterLimit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn plain_lp_passthrough() {
        // min x s.t. x >= 1.
        let mut p = ConvexProgram::new(1, vec![0.0], vec![10.0]);
        p.objective = vec![1.0];
        p.linear.push(LinearRow { coeffs: vec![(0, 1.0)], sense: RowSense::Ge, rhs: 1.0 });
        let s = solve_convex(&p).unwrap();
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn box_qp_via_epigraph() {
        // min (x-1)^2 over [0, 3] via epigraph variable.
        let mut p = ConvexProgram::new(2, vec![0.0, 0.0], vec![3.0, 100.0]);
        p.objective = vec![0.0, 1.0];
        p.convex.push(ConvexRow::QuadSum {
            terms: vec![Affine { coeffs: vec![(0, 1.0)], constant: -1.0 }],
            lin: vec![(1, -1.0)],
            constant: 0.0,
        });
        let s = solve_convex(&p).unwrap();
        assert_eq!(s.status, KernelStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-4, "x = {}", s.x[0]);
        assert!(s.objective.abs() < 1e-7, "obj = {}", s.objective);
    }

    #[test]
    fn abs_sum_epigraph() {
        // min |x - 2| + |x + 1| over [-5, 5]: optimum 3 on [-1, 2].
        let mut p = ConvexProgram::new(2, vec![-5.0, 0.0], vec![5.0, 100.0]);
        p.objective = vec![0.0, 1.0];
        p.convex.push(ConvexRow::AbsSum {
            terms: vec![
                Affine { coeffs: vec![(0, 1.0)], constant: -2.0 },
                Affine { coeffs: vec![(0, 1.0)], constant: 1.0 },
            ],
            lin: vec![(1, -1.0)],
            constant: 0.0,
        });
        let s = solve_convex(&p).unwrap();
        assert_relative_eq!(s.objective, 3.0, epsilon = 1e-7);
    }

    #[test]
    fn log_constraint() {
        // min x subject to ln(x) >= 0 i.e. -ln(x) <= 0, x in [0.1, 10].
        let mut p = ConvexProgram::new(1, vec![0.1], vec![10.0]);
        p.objective = vec![1.0];
        p.convex.push(ConvexRow::NegLogSum {
            terms: vec![(0, 1.0)],
            lin: vec![],
            constant: 0.0,
        });
        let s = solve_convex(&p).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6, "x = {}", s.x[0]);
    }

    #[test]
    fn quadratic_constraint_with_linear_objective() {
        // min -x - y s.t. x^2 + y^2 <= 1: optimum at (√.5, √.5), value -√2.
        let mut p = ConvexProgram::new(2, vec![-2.0, -2.0], vec![2.0, 2.0]);
        p.objective = vec![-1.0, -1.0];
        p.convex.push(ConvexRow::QuadSum {
            terms: vec![
                Affine { coeffs: vec![(0, 1.0)], constant: 0.0 },
                Affine { coeffs: vec![(1, 1.0)], constant: 0.0 },
            ],
            lin: vec![],
            constant: -1.0,
        });
        let s = solve_convex(&p).unwrap();
        assert_eq!(s.status, KernelStatus::Optimal);
        assert_relative_eq!(s.objective, -std::f64::consts::SQRT_2, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_program_reported() {
        let mut p = ConvexProgram::new(1, vec![0.0], vec![1.0]);
        p.linear.push(LinearRow { coeffs: vec![(0, 1.0)], sense: RowSense::Ge, rhs: 2.0 });
        assert!(matches!(solve_convex(&p), Err(Error::Infeasible(_))));
    }
}
