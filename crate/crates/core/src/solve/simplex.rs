//! Dense two-phase primal simplex with bounded variables.
//!
//! Structural variables carry finite lower bounds (upper bounds may be
//! infinite); rows are `<=`, `>=`, or `=`. Slacks are added per inequality
//! row and artificials per row as needed for phase 1. The tableau is kept
//! dense, which is fine at the sizes the kernel produces (hundreds of rows).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub n: usize,
    /// Minimized objective coefficients.
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-9;

struct Tableau {
    nrows: usize,
    ncols: usize,
    /// Row-major `B^{-1} A`, all columns.
    t: Vec<f64>,
    /// Values of the basic variables per row.
    xb: Vec<f64>,
    /// Basic variable index per row.
    basis: Vec<usize>,
    state: Vec<VarState>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    degenerate_steps: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.ncols + c]
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::Basic(r) => self.xb[r],
            VarState::AtLower => self.lower[j],
            VarState::AtUpper => self.upper[j],
        }
    }

    fn reduced_costs(&self, c: &[f64]) -> Vec<f64> {
        let mut d = c.to_vec();
        for (r, &bi) in self.basis.iter().enumerate() {
            let cb = c[bi];
            if cb != 0.0 {
                for j in 0..self.ncols {
                    d[j] -= cb * self.at(r, j);
                }
            }
        }
        d
    }

    /// Gaussian elimination on the tableau only; basic-variable values are
    /// maintained separately by the move updates in `step`.
    fn pivot(&mut self, r: usize, j: usize) {
        let piv = self.at(r, j);
        let ncols = self.ncols;
        let inv = 1.0 / piv;
        for cc in 0..ncols {
            self.t[r * ncols + cc] *= inv;
        }
        for rr in 0..self.nrows {
            if rr == r {
                continue;
            }
            let factor = self.t[rr * ncols + j];
            if factor == 0.0 {
                continue;
            }
            for cc in 0..ncols {
                self.t[rr * ncols + cc] -= factor * self.t[r * ncols + cc];
            }
        }
    }

    /// One simplex iteration for the cost vector `c`. Returns:
    /// `None` when optimal, `Some(Ok(()))` after a pivot or bound flip,
    /// `Some(Err(()))` when unbounded.
    fn step(&mut self, d: &mut Vec<f64>, bland: bool) -> Option<Result<(), ()>> {
        // Entering variable.
        let mut enter = usize::MAX;
        let mut enter_dir = 1.0;
        let mut best = COST_TOL;
        for j in 0..self.ncols {
            match self.state[j] {
                VarState::Basic(_) => continue,
                VarState::AtLower => {
                    if -d[j] > best {
                        best = -d[j];
                        enter = j;
                        enter_dir = 1.0;
                        if bland {
                            break;
                        }
                    }
                }
                VarState::AtUpper => {
                    if d[j] > best {
                        best = d[j];
                        enter = j;
                        enter_dir = -1.0;
                        if bland {
                            break;
                        }
                    }
                }
            }
        }
        if enter == usize::MAX {
            return None;
        }

        // Ratio test. Moving x_enter by t*dir changes basics by -t*dir*col.
        let mut t_best = self.upper[enter] - self.lower[enter]; // bound flip
        let mut leave: Option<usize> = None;
        let mut leave_to_upper = false;
        let mut piv_size = 0.0f64;
        for r in 0..self.nrows {
            let y = enter_dir * self.at(r, enter);
            let bi = self.basis[r];
            if y > PIVOT_TOL {
                let slack = self.xb[r] - self.lower[bi];
                let ratio = slack.max(0.0) / y;
                if ratio < t_best - 1e-12
                    || (ratio < t_best + 1e-12
                        && leave.is_some()
                        && y.abs() > piv_size
                        && !bland)
                {
                    t_best = ratio;
                    leave = Some(r);
                    leave_to_upper = false;
                    piv_size = y.abs();
                }
            } else if y < -PIVOT_TOL && self.upper[bi].is_finite() {
                let slack = self.upper[bi] - self.xb[r];
                let ratio = slack.max(0.0) / (-y);
                if ratio < t_best - 1e-12
                    || (ratio < t_best + 1e-12
                        && leave.is_some()
                        && y.abs() > piv_size
                        && !bland)
                {
                    t_best = ratio;
                    leave = Some(r);
                    leave_to_upper = true;
                    piv_size = y.abs();
                }
            }
        }

        if t_best.is_infinite() {
            return Some(Err(()));
        }
        if t_best.abs() < 1e-12 {
            self.degenerate_steps += 1;
        } else {
            self.degenerate_steps = 0;
        }

        match leave {
            None => {
                // Bound flip of the entering variable.
                let delta = enter_dir * t_best;
                for r in 0..self.nrows {
                    let y = self.at(r, enter);
                    self.xb[r] -= delta * y;
                }
                self.state[enter] = if enter_dir > 0.0 {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
            }
            Some(r) => {
                let old_basic = self.basis[r];
                let enter_from = self.nonbasic_value(enter);
                // New value of the entering variable.
                let new_val = enter_from + enter_dir * t_best;
                self.state[old_basic] = if leave_to_upper {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
                // Update basic values for the move, then pivot the tableau.
                let delta = enter_dir * t_best;
                for rr in 0..self.nrows {
                    self.xb[rr] -= delta * self.at(rr, enter);
                }
                self.xb[r] = new_val;
                self.basis[r] = enter;
                self.state[enter] = VarState::Basic(r);
                self.pivot(r, enter);
                // Reduced costs update: d_j -= d_enter * row_r_j, with the
                // pivoted row already normalized.
                let d_enter = d[enter];
                if d_enter != 0.0 {
                    for j in 0..self.ncols {
                        d[j] -= d_enter * self.at(r, j);
                    }
                }
                d[enter] = 0.0;
            }
        }
        Some(Ok(()))
    }

    fn run(&mut self, c: &[f64], max_iter: usize) -> LpStatus {
        let mut d = self.reduced_costs(c);
        let mut iters = 0usize;
        loop {
            if iters >= max_iter {
                return LpStatus::IterLimit;
            }
            let bland = self.degenerate_steps > 2 * (self.nrows + 16);
            match self.step(&mut d, bland) {
                None => return LpStatus::Optimal,
                Some(Ok(())) => {}
                Some(Err(())) => return LpStatus::Unbounded,
            }
            iters += 1;
            // Periodically refresh reduced costs to shed accumulated error.
            if iters % 256 == 0 {
                d = self.reduced_costs(c);
            }
        }
    }
}

pub fn solve_lp(p: &LpProblem) -> LpSolution {
    debug_assert_eq!(p.c.len(), p.n);
    debug_assert!(p.lower.iter().all(|l| l.is_finite()));
    let nrows = p.rows.len();
    let nslack = p.rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let ncols = p.n + nslack + nrows; // structurals, slacks, artificials
    let mut lower = vec![0.0; ncols];
    let mut upper = vec![f64::INFINITY; ncols];
    lower[..p.n].copy_from_slice(&p.lower);
    upper[..p.n].copy_from_slice(&p.upper);

    // Dense row storage: coefficient matrix of the equality system.
    let mut a = vec![0.0; nrows * ncols];
    let mut b = vec![0.0; nrows];
    let mut slack_idx = p.n;
    for (r, row) in p.rows.iter().enumerate() {
        let flip = row.sense == Sense::Ge;
        let sgn = if flip { -1.0 } else { 1.0 };
        for &(j, v) in &row.coeffs {
            debug_assert!(j < p.n);
            a[r * ncols + j] += sgn * v;
        }
        b[r] = sgn * row.rhs;
        if row.sense != Sense::Eq {
            a[r * ncols + slack_idx] = 1.0;
            slack_idx += 1;
        }
    }

    // Starting point: structurals at the bound closest to zero, slacks and
    // artificials chosen to make each row consistent.
    let mut state = vec![VarState::AtLower; ncols];
    for j in 0..p.n {
        if p.upper[j].is_finite() && p.upper[j] < 0.0 {
            state[j] = VarState::AtUpper;
        }
    }
    let start_values: Vec<f64> = (0..p.n)
        .map(|j| match state[j] {
            VarState::AtUpper => upper[j],
            _ => lower[j],
        })
        .collect();

    let mut basis = vec![0usize; nrows];
    let mut xb = vec![0.0; nrows];
    let mut slack_of_row = vec![usize::MAX; nrows];
    let mut si = p.n;
    for (r, row) in p.rows.iter().enumerate() {
        if row.sense != Sense::Eq {
            slack_of_row[r] = si;
            si += 1;
        }
    }
    let mut phase1_cost = vec![0.0; ncols];
    for r in 0..nrows {
        let mut resid = b[r];
        for j in 0..p.n {
            resid -= a[r * ncols + j] * start_values[j];
        }
        let art = p.n + nslack + r;
        if slack_of_row[r] != usize::MAX && resid >= 0.0 {
            // Slack can absorb the residual.
            basis[r] = slack_of_row[r];
            xb[r] = resid;
            state[slack_of_row[r]] = VarState::Basic(r);
            upper[art] = 0.0;
        } else {
            let sgn = if resid >= 0.0 { 1.0 } else { -1.0 };
            a[r * ncols + art] = sgn;
            // Normalize so the starting tableau is B^{-1}A (basis columns
            // must be unit vectors).
            if sgn < 0.0 {
                for j in 0..ncols {
                    a[r * ncols + j] = -a[r * ncols + j];
                }
            }
            basis[r] = art;
            xb[r] = resid.abs();
            state[art] = VarState::Basic(r);
            phase1_cost[art] = 1.0;
        }
    }

    let mut tab = Tableau {
        nrows,
        ncols,
        t: a,
        xb,
        basis,
        state,
        lower,
        upper,
        degenerate_steps: 0,
    };

    let max_iter = 200 * (nrows + ncols) + 2000;

    // Phase 1.
    if phase1_cost.iter().any(|&c| c != 0.0) {
        let status = tab.run(&phase1_cost, max_iter);
        if status == LpStatus::IterLimit {
            return LpSolution { status, x: vec![0.0; p.n], objective: f64::NAN };
        }
        let infeas: f64 = (0..nrows)
            .filter(|&r| phase1_cost[tab.basis[r]] != 0.0)
            .map(|r| tab.xb[r])
            .sum();
        if infeas > 1e-7 {
            return LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; p.n],
                objective: f64::NAN,
            };
        }
        // Pin artificials at zero for phase 2.
        for j in p.n + nslack..ncols {
            tab.upper[j] = 0.0;
            if let VarState::AtUpper = tab.state[j] {
                tab.state[j] = VarState::AtLower;
            }
        }
    }

    // Phase 2.
    let mut cost = vec![0.0; ncols];
    cost[..p.n].copy_from_slice(&p.c);
    let status = tab.run(&cost, max_iter);
    if status == LpStatus::Unbounded {
        return LpSolution { status, x: vec![0.0; p.n], objective: f64::NEG_INFINITY };
    }
    if status == LpStatus::IterLimit {
        return LpSolution { status, x: vec![0.0; p.n], objective: f64::NAN };
    }

    let mut x = vec![0.0; p.n];
    for j in 0..p.n {
        x[j] = match tab.state[j] {
            VarState::Basic(r) => tab.xb[r],
            VarState::AtLower => tab.lower[j],
            VarState::AtUpper => tab.upper[j],
        };
    }
    let objective = p.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpSolution { status: LpStatus::Optimal, x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn row(coeffs: &[(usize, f64)], sense: Sense, rhs: f64) -> LpRow {
        LpRow { coeffs: coeffs.to_vec(), sense, rhs }
    }

    #[test]
    fn simple_bound_problem() {
        // min x subject to x >= 1, x in [0, 10].
        let p = LpProblem {
            n: 1,
            c: vec![1.0],
            lower: vec![0.0],
            upper: vec![10.0],
            rows: vec![row(&[(0, 1.0)], Sense::Ge, 1.0)],
        };
        let s = solve_lp(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn two_var_lp() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6 over [0,10]^2.
        let p = LpProblem {
            n: 2,
            c: vec![-1.0, -1.0],
            lower: vec![0.0, 0.0],
            upper: vec![10.0, 10.0],
            rows: vec![
                row(&[(0, 1.0), (1, 2.0)], Sense::Le, 4.0),
                row(&[(0, 3.0), (1, 1.0)], Sense::Le, 6.0),
            ],
        };
        let s = solve_lp(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        // Vertex (1.6, 1.2) with value 2.8.
        assert_relative_eq!(s.objective, -2.8, epsilon = 1e-8);
    }

    #[test]
    fn infeasible_detected() {
        let p = LpProblem {
            n: 1,
            c: vec![0.0],
            lower: vec![0.0],
            upper: vec![1.0],
            rows: vec![row(&[(0, 1.0)], Sense::Ge, 2.0)],
        };
        assert_eq!(solve_lp(&p).status, LpStatus::Infeasible);
    }

    #[test]
    fn equality_row() {
        // min x + y s.t. x + y = 2, x - y <= 0, boxes [0, 5].
        let p = LpProblem {
            n: 2,
            c: vec![1.0, 1.0],
            lower: vec![0.0, 0.0],
            upper: vec![5.0, 5.0],
            rows: vec![
                row(&[(0, 1.0), (1, 1.0)], Sense::Eq, 2.0),
                row(&[(0, 1.0), (1, -1.0)], Sense::Le, 0.0),
            ],
        };
        let s = solve_lp(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn negative_bounds_and_upper_start() {
        // min -x over [-3, -1].
        let p = LpProblem {
            n: 1,
            c: vec![-1.0],
            lower: vec![-3.0],
            upper: vec![-1.0],
            rows: vec![],
        };
        let s = solve_lp(&p);
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.x[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn unbounded_detected() {
        let p = LpProblem {
            n: 1,
            c: vec![-1.0],
            lower: vec![0.0],
            upper: vec![f64::INFINITY],
            rows: vec![],
        };
        assert_eq!(solve_lp(&p).status, LpStatus::Unbounded);
    }

    /// Brute-force LP oracle: enumerate all basic points from row/bound
    /// intersections and take the best feasible one. Only for tiny problems.
    fn vertex_enumeration_oracle(p: &LpProblem) -> Option<f64> {
        let n = p.n;
        // Collect hyperplanes: active rows or active bounds.
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for r in &p.rows {
            let mut a = vec![0.0; n];
            for &(j, v) in &r.coeffs {
                a[j] += v;
            }
            planes.push((a, r.rhs));
        }
        for j in 0..n {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            planes.push((a.clone(), p.lower[j]));
            if p.upper[j].is_finite() {
                planes.push((a, p.upper[j]));
            }
        }
        let feasible = |x: &[f64]| -> bool {
            for j in 0..n {
                if x[j] < p.lower[j] - 1e-7 || x[j] > p.upper[j] + 1e-7 {
                    return false;
                }
            }
            for r in &p.rows {
                let lhs: f64 = r.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
                let ok = match r.sense {
                    Sense::Le => lhs <= r.rhs + 1e-7,
                    Sense::Ge => lhs >= r.rhs - 1e-7,
                    Sense::Eq => (lhs - r.rhs).abs() <= 1e-7,
                };
                if !ok {
                    return false;
                }
            }
            true
        };
        let mut best: Option<f64> = None;
        let k = planes.len();
        let mut idx = vec![0usize; n];
        fn combos(
            k: usize,
            n: usize,
            start: usize,
            idx: &mut Vec<usize>,
            depth: usize,
            f: &mut impl FnMut(&[usize]),
        ) {
            if depth == n {
                f(idx);
                return;
            }
            for i in start..k {
                idx[depth] = i;
                combos(k, n, i + 1, idx, depth + 1, f);
            }
        }
        let check = |sel: &[usize]| {
            // Solve the n x n system by Gaussian elimination.
            let mut m = vec![0.0; n * (n + 1)];
            for (r, &pi) in sel.iter().enumerate() {
                for c in 0..n {
                    m[r * (n + 1) + c] = planes[pi].0[c];
                }
                m[r * (n + 1) + n] = planes[pi].1;
            }
            for col in 0..n {
                let piv = (col..n).max_by(|&a, &b| {
                    m[a * (n + 1) + col]
                        .abs()
                        .partial_cmp(&m[b * (n + 1) + col].abs())
                        .unwrap()
                })?;
                if m[piv * (n + 1) + col].abs() < 1e-9 {
                    return None;
                }
                for c in 0..=n {
                    m.swap(col * (n + 1) + c, piv * (n + 1) + c);
                }
                let inv = 1.0 / m[col * (n + 1) + col];
                for c in 0..=n {
                    m[col * (n + 1) + c] *= inv;
                }
                for r in 0..n {
                    if r != col {
                        let f = m[r * (n + 1) + col];
                        for c in 0..=n {
                            m[r * (n + 1) + c] -= f * m[col * (n + 1) + c];
                        }
                    }
                }
            }
            let x: Vec<f64> = (0..n).map(|r| m[r * (n + 1) + n]).collect();
            if feasible(&x) {
                let v: f64 = p.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                Some(v)
            } else {
                None
            }
        };
        combos(k, n, 0, &mut idx, 0, &mut |sel| {
            if let Some(v) = check(sel) {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        });
        best
    }

    #[test]
    fn random_lps_match_vertex_enumeration() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut compared = 0;
        for _ in 0..40 {
            let n = rng.random_range(1..=4usize);
            let nrows = rng.random_range(0..=8usize);
            let p = LpProblem {
                n,
                c: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
                lower: vec![0.0; n],
                upper: (0..n).map(|_| rng.random_range(0.5..4.0)).collect(),
                rows: (0..nrows)
                    .map(|_| {
                        let coeffs: Vec<(usize, f64)> = (0..n)
                            .map(|j| (j, rng.random_range(-2.0..2.0)))
                            .collect();
                        let sense = if rng.random_bool(0.8) { Sense::Le } else { Sense::Ge };
                        LpRow { coeffs, sense, rhs: rng.random_range(-1.0..3.0) }
                    })
                    .collect(),
            };
            let s = solve_lp(&p);
            let oracle = vertex_enumeration_oracle(&p);
            match (s.status, oracle) {
                (LpStatus::Optimal, Some(v)) => {
                    assert!(
                        (s.objective - v).abs() <= 1e-7 * (1.0 + v.abs()),
                        "simplex {} vs oracle {v}",
                        s.objective
                    );
                    compared += 1;
                }
                (LpStatus::Infeasible, None) => {}
                (st, or) => panic!("status {st:?} vs oracle {or:?}"),
            }
        }
        assert!(compared >= 10, "want enough solvable instances, got {compared}");
    }
}
