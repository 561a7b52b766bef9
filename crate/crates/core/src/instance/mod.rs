//! Problem data model: grouped populations, utility models, efficiency
//! bands, feasible sets, and big-M derivation.

use crate::measures::EmpiricalDist;
use crate::solve::kernel::{solve_convex, Affine, ConvexProgram, ConvexRow, LinearRow, RowSense};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Scenarios with group labels partitioning `[m]` into index sets `C_a`.
///
/// The partition invariant (disjoint, exhaustive, nonempty groups) holds by
/// construction: every scenario carries exactly one label and groups are the
/// label fibers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedPopulation {
    scenarios: Vec<Vec<f64>>,
    labels: Vec<String>,
    group_names: Vec<String>,
    groups: Vec<Vec<usize>>,
}

impl GroupedPopulation {
    pub fn new(scenarios: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::domain("population needs at least one scenario"));
        }
        if scenarios.len() != labels.len() {
            return Err(Error::domain("one group label per scenario required"));
        }
        let kappa = scenarios[0].len();
        if scenarios.iter().any(|s| s.len() != kappa) {
            return Err(Error::domain("all scenario vectors must share a dimension"));
        }
        if scenarios.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("scenario entries must be finite"));
        }
        let mut group_names: Vec<String> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            match group_names.iter().position(|g| g == label) {
                Some(a) => groups[a].push(i),
                None => {
                    group_names.push(label.clone());
                    groups.push(vec![i]);
                }
            }
        }
        Ok(GroupedPopulation { scenarios, labels, group_names, groups })
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn dim(&self) -> usize {
        self.scenarios[0].len()
    }

    pub fn scenarios(&self) -> &[Vec<f64>] {
        &self.scenarios
    }

    pub fn scenario(&self, i: usize) -> &[f64] {
        &self.scenarios[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Scenario index set `C_a`.
    pub fn group(&self, a: usize) -> &[usize] {
        &self.groups[a]
    }

    pub fn group_size(&self, a: usize) -> usize {
        self.groups[a].len()
    }
}

/// Affine-in-`x` utility core `f(x, xi) = xi . (A x + a0) + a1 . x + a2`.
///
/// `a_matrix = None` means the identity (requires `kappa == n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineUtility {
    pub a_matrix: Option<Vec<Vec<f64>>>,
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: f64,
}

impl AffineUtility {
    /// Plain `f = xi . x` for `kappa == n`.
    pub fn dot(n: usize) -> Self {
        AffineUtility { a_matrix: None, a0: vec![0.0; n], a1: vec![0.0; n], a2: 0.0 }
    }

    /// Coefficients of `f(., xi)` as `c . x + d` for a fixed scenario.
    pub fn coefficients(&self, xi: &[f64]) -> (Vec<f64>, f64) {
        let n = self.a1.len();
        let mut c = self.a1.clone();
        match &self.a_matrix {
            None => {
                debug_assert_eq!(xi.len(), n, "identity A requires kappa == n");
                for j in 0..n {
                    c[j] += xi[j];
                }
            }
            Some(a) => {
                debug_assert_eq!(a.len(), xi.len());
                for (k, row) in a.iter().enumerate() {
                    for j in 0..n {
                        c[j] += xi[k] * row[j];
                    }
                }
            }
        }
        let d = xi.iter().zip(&self.a0).map(|(x, a)| x * a).sum::<f64>() + self.a2;
        (c, d)
    }

    /// `r(x) = A x + a0`, the scenario-facing linear image used by the
    /// moment bounds.
    pub fn r_of_x(&self, x: &[f64]) -> Vec<f64> {
        match &self.a_matrix {
            None => x.iter().zip(&self.a0).map(|(xj, a)| xj + a).collect(),
            Some(a) => a
                .iter()
                .zip(&self.a0)
                .map(|(row, a0)| row.iter().zip(x).map(|(r, xj)| r * xj).sum::<f64>() + a0)
                .collect(),
        }
    }

    /// Given a vector `w` in scenario space, returns the `x`-coefficients
    /// and constant of `w . r(x)`.
    pub fn pullback(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let n = self.a1.len();
        let mut c = vec![0.0; n];
        match &self.a_matrix {
            None => c.copy_from_slice(&w[..n]),
            Some(a) => {
                for (k, row) in a.iter().enumerate() {
                    for j in 0..n {
                        c[j] += w[k] * row[j];
                    }
                }
            }
        }
        let d = w.iter().zip(&self.a0).map(|(wk, a)| wk * a).sum::<f64>();
        (c, d)
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> f64 {
        let (c, d) = self.coefficients(xi);
        c.iter().zip(x).map(|(cj, xj)| cj * xj).sum::<f64>() + d
    }
}

/// Utility model variants. Exponential and logarithmic utilities are carried
/// by their piecewise-linear tangent surrogates throughout (evaluation,
/// models, bounds), since their exact graphs are not mixed-integer convex
/// representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityModel {
    Linear(AffineUtility),
    PiecewiseMax { pieces: Vec<AffineUtility> },
    PiecewiseMin { pieces: Vec<AffineUtility> },
    /// `exp(inner)` approximated by tangent lines at the inner values
    /// `tangents`, combined with max.
    ExpPwl { inner: AffineUtility, tangents: Vec<f64> },
    /// `log(inner)` approximated by tangent lines, combined with min;
    /// requires the inner function strictly positive on the box.
    LogPwl { inner: AffineUtility, tangents: Vec<f64> },
}

/// How affine pieces combine into the utility value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceCombiner {
    Single,
    Max,
    Min,
}

impl UtilityModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            UtilityModel::ExpPwl { tangents, .. } | UtilityModel::LogPwl { tangents, .. } => {
                if tangents.is_empty() {
                    return Err(Error::domain("tangent surrogate needs at least one point"));
                }
                if tangents.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::domain("tangent points must be strictly increasing"));
                }
                if let UtilityModel::LogPwl { tangents, .. } = self {
                    if tangents.iter().any(|&g| g <= 0.0) {
                        return Err(Error::domain("log tangent points must be positive"));
                    }
                }
                Ok(())
            }
            UtilityModel::PiecewiseMax { pieces } | UtilityModel::PiecewiseMin { pieces } => {
                if pieces.is_empty() {
                    return Err(Error::domain("piecewise utility needs at least one piece"));
                }
                Ok(())
            }
            UtilityModel::Linear(_) => Ok(()),
        }
    }

    /// Affine pieces `(c, d)` of `f(., xi)` and how they combine.
    pub fn pieces(&self, xi: &[f64]) -> (PieceCombiner, Vec<(Vec<f64>, f64)>) {
        match self {
            UtilityModel::Linear(u) => (PieceCombiner::Single, vec![u.coefficients(xi)]),
            UtilityModel::PiecewiseMax { pieces } => {
                (PieceCombiner::Max, pieces.iter().map(|p| p.coefficients(xi)).collect())
            }
            UtilityModel::PiecewiseMin { pieces } => {
                (PieceCombiner::Min, pieces.iter().map(|p| p.coefficients(xi)).collect())
            }
            UtilityModel::ExpPwl { inner, tangents } => {
                let (c, d) = inner.coefficients(xi);
                let pieces = tangents
                    .iter()
                    .map(|&g| {
                        let s = g.exp();
                        let cg: Vec<f64> = c.iter().map(|cj| s * cj).collect();
                        (cg, s + s * (d - g))
                    })
                    .collect();
                (PieceCombiner::Max, pieces)
            }
            UtilityModel::LogPwl { inner, tangents } => {
                let (c, d) = inner.coefficients(xi);
                let pieces = tangents
                    .iter()
                    .map(|&g| {
                        let s = 1.0 / g;
                        let cg: Vec<f64> = c.iter().map(|cj| s * cj).collect();
                        (cg, g.ln() + s * (d - g))
                    })
                    .collect();
                (PieceCombiner::Min, pieces)
            }
        }
    }
}

/// Evaluates the utility model at `(x, xi)`. Exp/log variants return the
/// piecewise-linear surrogate value (max of tangents for exp, min for log).
pub fn eval_utility(u: &UtilityModel, x: &[f64], xi: &[f64]) -> Result<f64> {
    if let UtilityModel::LogPwl { inner, .. } = u {
        let v = inner.eval(x, xi);
        if v <= 0.0 {
            return Err(Error::domain(format!("log utility inner value {v} is not positive")));
        }
    }
    let (combiner, pieces) = u.pieces(xi);
    let vals = pieces
        .iter()
        .map(|(c, d)| c.iter().zip(x).map(|(cj, xj)| cj * xj).sum::<f64>() + d);
    Ok(match combiner {
        PieceCombiner::Single => vals.into_iter().next().expect("one piece"),
        PieceCombiner::Max => vals.into_iter().fold(f64::NEG_INFINITY, f64::max),
        PieceCombiner::Min => vals.into_iter().fold(f64::INFINITY, f64::min),
    })
}

/// Mixed-integer convex-representable decision space: a finite box with
/// linear inequalities `g . x <= h`, linear equalities, and per-variable
/// integrality flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub inequalities: Vec<LinearTerm>,
    #[serde(default)]
    pub equalities: Vec<LinearTerm>,
    #[serde(default)]
    pub integer: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl FeasibleSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = lower.len();
        let set = FeasibleSet {
            lower,
            upper,
            inequalities: Vec::new(),
            equalities: Vec::new(),
            integer: vec![false; n],
        };
        set.validate()?;
        Ok(set)
    }

    pub fn binary(n: usize) -> Self {
        FeasibleSet {
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            inequalities: Vec::new(),
            equalities: Vec::new(),
            integer: vec![true; n],
        }
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::domain("bound vectors must have equal length"));
        }
        if !self.integer.is_empty() && self.integer.len() != self.lower.len() {
            return Err(Error::domain("integrality flags must cover all variables"));
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::domain("variable bounds must be finite for big-M derivation"));
            }
            if l > u {
                return Err(Error::domain(format!("crossed bounds {l} > {u}")));
            }
        }
        for t in self.inequalities.iter().chain(&self.equalities) {
            if t.coeffs.len() != self.lower.len() {
                return Err(Error::domain("constraint arity mismatch"));
            }
        }
        Ok(())
    }

    pub fn integer_flags(&self) -> Vec<bool> {
        if self.integer.is_empty() {
            vec![false; self.n()]
        } else {
            self.integer.clone()
        }
    }

    /// True when `x` lies in the box and satisfies all linear rows (with
    /// tolerance) and integrality.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.n() {
            return false;
        }
        for j in 0..self.n() {
            if x[j] < self.lower[j] - tol || x[j] > self.upper[j] + tol {
                return false;
            }
        }
        for t in &self.inequalities {
            let lhs: f64 = t.coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
            if lhs > t.rhs + tol {
                return false;
            }
        }
        for t in &self.equalities {
            let lhs: f64 = t.coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
            if (lhs - t.rhs).abs() > tol {
                return false;
            }
        }
        for (j, &flag) in self.integer_flags().iter().enumerate() {
            if flag && (x[j] - x[j].round()).abs() > tol {
                return false;
            }
        }
        true
    }
}

/// Efficiency (cost) model kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// `Q(x, xi_i) = xi_i . x` (mean linear cost).
    LinearCost,
    /// Mean absolute error `|xi_i . x - y_i|`.
    AbsDeviation,
    /// Mean squared error `(xi_i . x - y_i)^2`.
    SquaredDeviation,
    /// Geometric-mean allocation efficiency; the band lives in log space.
    NegGeoMeanLog,
    /// Negative total value `-xi_i . x` (knapsack).
    NegValue,
}

/// Efficiency model: cost kind, responses where applicable, inefficiency
/// level `epsilon`, and the cached optimum `V*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyModel {
    pub kind: CostKind,
    /// Responses `y_i` for the deviation costs; empty otherwise.
    #[serde(default)]
    pub responses: Vec<f64>,
    pub epsilon: f64,
    #[serde(default)]
    pub v_star: Option<f64>,
    /// Absolute slack accepted on the band check, mainly for `V* = 0`
    /// degeneracy where the relative band collapses.
    #[serde(default = "default_abs_slack")]
    pub abs_slack: f64,
}

fn default_abs_slack() -> f64 {
    1e-9
}

impl EfficiencyModel {
    pub fn new(kind: CostKind, responses: Vec<f64>, epsilon: f64) -> Result<Self> {
        if epsilon < 0.0 {
            return Err(Error::domain("inefficiency level must be nonnegative"));
        }
        Ok(EfficiencyModel { kind, responses, epsilon, v_star: None, abs_slack: 1e-9 })
    }

    /// Unconstrained fairness: an effectively infinite band.
    pub fn unconstrained(kind: CostKind, responses: Vec<f64>) -> Self {
        EfficiencyModel { kind, responses, epsilon: f64::INFINITY, v_star: None, abs_slack: 1e-9 }
    }
}

/// A complete DFSO instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfsoInstance {
    pub population: GroupedPopulation,
    pub utility: UtilityModel,
    pub efficiency: EfficiencyModel,
    pub feasible: FeasibleSet,
    /// Wasserstein order; measures accept any `q >= 1`, model builders
    /// require `q` in `{1, 2}`.
    pub q: f64,
}

impl DfsoInstance {
    pub fn new(
        population: GroupedPopulation,
        utility: UtilityModel,
        efficiency: EfficiencyModel,
        feasible: FeasibleSet,
        q: f64,
    ) -> Result<Self> {
        if !(q >= 1.0) {
            return Err(Error::domain("q must be >= 1"));
        }
        feasible.validate()?;
        utility.validate()?;
        if population.group_count() < 2 {
            return Err(Error::domain("DFSO needs at least two groups"));
        }
        match efficiency.kind {
            CostKind::AbsDeviation | CostKind::SquaredDeviation => {
                if efficiency.responses.len() != population.len() {
                    return Err(Error::domain("deviation costs need one response per scenario"));
                }
            }
            _ => {}
        }
        let inst = DfsoInstance { population, utility, efficiency, feasible, q };
        // Log utilities must keep the inner affine form positive over the box.
        if let UtilityModel::LogPwl { inner, .. } = &inst.utility {
            for i in 0..inst.population.len() {
                let (c, d) = inner.coefficients(inst.population.scenario(i));
                let (lo, _) = affine_range(&c, d, &inst.feasible.lower, &inst.feasible.upper);
                if lo <= 0.0 {
                    return Err(Error::domain(format!(
                        "log utility can reach nonpositive inner value {lo} for scenario {i}"
                    )));
                }
            }
        }
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.feasible.n()
    }

    /// Utility outcome per scenario at `x`.
    pub fn utilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.population.len())
            .map(|i| eval_utility(&self.utility, x, self.population.scenario(i)))
            .collect()
    }

    /// Group utility distributions at `x`.
    pub fn group_dists(&self, x: &[f64]) -> Result<Vec<EmpiricalDist>> {
        let utils = self.utilities(x)?;
        (0..self.population.group_count())
            .map(|a| {
                EmpiricalDist::new(self.population.group(a).iter().map(|&i| utils[i]).collect())
            })
            .collect()
    }

    /// Exact fairness objective `WD_q^q(x)`.
    pub fn wd_objective(&self, x: &[f64]) -> Result<f64> {
        let dists = self.group_dists(x)?;
        Ok(crate::measures::wd_fairness(&dists, self.q)?.0)
    }

    /// Mean cost `E[Q(x, xi)]`; for the allocation kind this is the
    /// geometric mean (larger is better there).
    pub fn mean_cost(&self, x: &[f64]) -> Result<f64> {
        let m = self.population.len() as f64;
        match self.efficiency.kind {
            CostKind::LinearCost => {
                let mut total = 0.0;
                for s in self.population.scenarios() {
                    total += s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(total / m)
            }
            CostKind::NegValue => {
                let mut total = 0.0;
                for s in self.population.scenarios() {
                    total += s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok(-total / m)
            }
            CostKind::AbsDeviation => {
                let mut total = 0.0;
                for (s, y) in self.population.scenarios().iter().zip(&self.efficiency.responses) {
                    total += (s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - y).abs();
                }
                Ok(total / m)
            }
            CostKind::SquaredDeviation => {
                let mut total = 0.0;
                for (s, y) in self.population.scenarios().iter().zip(&self.efficiency.responses) {
                    total += (s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - y).powi(2);
                }
                Ok(total / m)
            }
            CostKind::NegGeoMeanLog => {
                if x.iter().any(|&v| v <= 0.0) {
                    return Err(Error::domain("geometric mean needs positive rates"));
                }
                let log_mean = x.iter().map(|v| v.ln()).sum::<f64>() / x.len() as f64;
                Ok(log_mean.exp())
            }
        }
    }
}

/// Per-scenario utility bounds and the derived big-M coefficients used by
/// the model builders.
#[derive(Debug, Clone, PartialEq)]
pub struct BigM {
    /// `M_i >= max |f(x, xi_i)|` over the box.
    pub per_scenario: Vec<f64>,
    /// Ascending `M` values per group.
    pub group_sorted_asc: Vec<Vec<f64>>,
    /// `w_hat[a][b - a - 1]` for `a < b`: complementary big-M, infinite when
    /// overflowed.
    pub complementary: Vec<Vec<f64>>,
    /// True when any complementary coefficient overflowed.
    pub overflow: bool,
}

impl BigM {
    /// `M_(k)`: the k-th smallest per-scenario bound within group `a`
    /// (1-based `k`).
    pub fn kth_smallest(&self, a: usize, k: usize) -> f64 {
        self.group_sorted_asc[a][k - 1]
    }

    /// The k-th largest per-scenario bound within group `a` (1-based `k`).
    pub fn kth_largest(&self, a: usize, k: usize) -> f64 {
        let g = &self.group_sorted_asc[a];
        g[g.len() - k]
    }

    pub fn max(&self) -> f64 {
        self.per_scenario.iter().cloned().fold(0.0, f64::max)
    }

    pub fn w_hat(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < b);
        self.complementary[a][b - a - 1]
    }
}

/// Interval range of `c . x + d` over the box `[lower, upper]`.
pub fn affine_range(c: &[f64], d: f64, lower: &[f64], upper: &[f64]) -> (f64, f64) {
    let mut lo = d;
    let mut hi = d;
    for j in 0..c.len() {
        let (a, b) = (c[j] * lower[j], c[j] * upper[j]);
        lo += a.min(b);
        hi += a.max(b);
    }
    (lo, hi)
}

/// Interval range of the utility for scenario `i` over the box (linear
/// constraints are ignored; the box relaxation keeps the bound valid).
pub fn utility_range(instance: &DfsoInstance, i: usize) -> (f64, f64) {
    let xi = instance.population.scenario(i);
    let (combiner, pieces) = instance.utility.pieces(xi);
    let ranges: Vec<(f64, f64)> = pieces
        .iter()
        .map(|(c, d)| affine_range(c, *d, &instance.feasible.lower, &instance.feasible.upper))
        .collect();
    match combiner {
        PieceCombiner::Single => ranges[0],
        PieceCombiner::Max => (
            ranges.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
            ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
        ),
        PieceCombiner::Min => (
            ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
            ranges.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
        ),
    }
}

/// Computes per-scenario bounds `M_i` by interval arithmetic over the box,
/// group-wise order statistics, and the complementary big-M values
/// `sum (M_i + M_j)^q` per pair (flagged on overflow).
pub fn compute_big_m(instance: &DfsoInstance) -> Result<BigM> {
    let m = instance.population.len();
    let mut per_scenario = Vec::with_capacity(m);
    for i in 0..m {
        let (lo, hi) = utility_range(instance, i);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::domain(format!("unbounded utility range for scenario {i}")));
        }
        per_scenario.push(lo.abs().max(hi.abs()));
    }
    let groups = instance.population.group_count();
    let mut group_sorted_asc = Vec::with_capacity(groups);
    for a in 0..groups {
        let mut g: Vec<f64> =
            instance.population.group(a).iter().map(|&i| per_scenario[i]).collect();
        g.sort_by(|x, y| x.partial_cmp(y).unwrap());
        group_sorted_asc.push(g);
    }
    let mut complementary = Vec::with_capacity(groups);
    let mut overflow = false;
    for a in 0..groups {
        let mut row = Vec::new();
        for b in a + 1..groups {
            let mut w = 0.0f64;
            for &i in instance.population.group(a) {
                for &j in instance.population.group(b) {
                    w += crate::measures::pow_q(per_scenario[i] + per_scenario[j], instance.q);
                }
            }
            if !w.is_finite() {
                overflow = true;
                w = f64::INFINITY;
            }
            row.push(w);
        }
        complementary.push(row);
    }
    Ok(BigM { per_scenario, group_sorted_asc, complementary, overflow })
}

/// Mean-cost threshold of the efficiency band `V* + eps |V*|`.
///
/// For the allocation kind the band lives in log space and is handled by
/// callers directly; this returns the standard threshold for the others.
pub fn band_threshold(eff: &EfficiencyModel) -> Result<f64> {
    let v = eff
        .v_star
        .ok_or_else(|| Error::domain("V* must be solved before using the efficiency band"))?;
    Ok(v + eff.epsilon * v.abs())
}

/// Whether `x` satisfies the efficiency band with the configured absolute
/// slack.
pub fn efficiency_ok(instance: &DfsoInstance, x: &[f64]) -> Result<bool> {
    let cost = instance.mean_cost(x)?;
    if instance.efficiency.epsilon.is_infinite() {
        return Ok(true);
    }
    match instance.efficiency.kind {
        CostKind::NegGeoMeanLog => {
            let v = instance
                .efficiency
                .v_star
                .ok_or_else(|| Error::domain("V* must be solved first"))?;
            Ok(cost >= (1.0 - instance.efficiency.epsilon) * v - instance.efficiency.abs_slack)
        }
        _ => Ok(cost <= band_threshold(&instance.efficiency)? + instance.efficiency.abs_slack),
    }
}

/// Solves `V* = min E[Q(x, xi)]` with the class-appropriate exact method.
pub fn solve_v_star(instance: &DfsoInstance) -> Result<f64> {
    let pop = &instance.population;
    let fs = &instance.feasible;
    let n = fs.n();
    let m = pop.len() as f64;
    match instance.efficiency.kind {
        CostKind::SquaredDeviation => {
            // Normal equations; fall back to the kernel when the
            // unconstrained minimizer escapes the feasible set.
            let x = normal_equations(pop.scenarios(), &instance.efficiency.responses)?;
            if fs.contains(&x, 1e-7) && fs.integer_flags().iter().all(|&b| !b) {
                let mut sse = 0.0;
                for (s, y) in pop.scenarios().iter().zip(&instance.efficiency.responses) {
                    sse += (s.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - y).powi(2);
                }
                return Ok(sse / m);
            }
            let mut prog = base_program(fs)?;
            let bound = mse_upper_bound(instance);
            let t = prog.add_var(0.0, bound, 1.0);
            let root = (1.0 / m).sqrt();
            let terms: Vec<Affine> = pop
                .scenarios()
                .iter()
                .zip(&instance.efficiency.responses)
                .map(|(s, y)| Affine { coeffs: sparse(&scale(s, root)), constant: -y * root })
                .collect();
            prog.convex.push(ConvexRow::QuadSum { terms, lin: vec![(t, -1.0)], constant: 0.0 });
            let sol = solve_mixed_for(instance, &prog)?;
            Ok(sol.1)
        }
        CostKind::AbsDeviation => {
            let mut prog = base_program(fs)?;
            let bound = mae_upper_bound(instance);
            let t = prog.add_var(0.0, bound, 1.0);
            let terms: Vec<Affine> = pop
                .scenarios()
                .iter()
                .zip(&instance.efficiency.responses)
                .map(|(s, y)| Affine { coeffs: sparse(&scale(s, 1.0 / m)), constant: -y / m })
                .collect();
            prog.convex.push(ConvexRow::AbsSum { terms, lin: vec![(t, -1.0)], constant: 0.0 });
            let sol = solve_mixed_for(instance, &prog)?;
            Ok(sol.1)
        }
        CostKind::LinearCost => {
            let mut prog = base_program(fs)?;
            for s in pop.scenarios() {
                for (j, &v) in s.iter().enumerate() {
                    prog.objective[j] += v / m;
                }
            }
            let sol = solve_mixed_for(instance, &prog)?;
            Ok(sol.1)
        }
        CostKind::NegValue => {
            if fs.integer_flags().iter().all(|&b| b) && fs.inequalities.len() == 1 {
                knapsack_v_star(instance)
            } else {
                let mut prog = base_program(fs)?;
                for s in pop.scenarios() {
                    for (j, &v) in s.iter().enumerate() {
                        prog.objective[j] -= v / m;
                    }
                }
                let sol = solve_mixed_for(instance, &prog)?;
                Ok(sol.1)
            }
        }
        CostKind::NegGeoMeanLog => {
            if fs.lower.iter().any(|&l| l <= 0.0) {
                return Err(Error::domain("allocation rates need strictly positive lower bounds"));
            }
            let mut prog = base_program(fs)?;
            // Epigraph on -mean(log x); V* is the geometric mean.
            let lo = fs.lower.iter().map(|l| l.ln()).sum::<f64>() / n as f64;
            let hi = fs.upper.iter().map(|u| u.ln()).sum::<f64>() / n as f64;
            let span = lo.abs().max(hi.abs()) + 1.0;
            let t = prog.add_var(-span, span, 1.0);
            prog.convex.push(ConvexRow::NegLogSum {
                terms: (0..n).map(|j| (j, 1.0 / n as f64)).collect(),
                lin: vec![(t, -1.0)],
                constant: 0.0,
            });
            let sol = solve_mixed_for(instance, &prog)?;
            Ok((-sol.1).exp())
        }
    }
}

fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

pub(crate) fn sparse(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(j, &c)| (j, c)).collect()
}

fn mse_upper_bound(instance: &DfsoInstance) -> f64 {
    let m = instance.population.len() as f64;
    let mut total = 0.0;
    for (i, y) in instance.efficiency.responses.iter().enumerate() {
        let xi = instance.population.scenario(i);
        let (lo, hi) = affine_range(xi, -y, &instance.feasible.lower, &instance.feasible.upper);
        total += lo.abs().max(hi.abs()).powi(2);
    }
    total / m + 1.0
}

fn mae_upper_bound(instance: &DfsoInstance) -> f64 {
    let m = instance.population.len() as f64;
    let mut total = 0.0;
    for (i, y) in instance.efficiency.responses.iter().enumerate() {
        let xi = instance.population.scenario(i);
        let (lo, hi) = affine_range(xi, -y, &instance.feasible.lower, &instance.feasible.upper);
        total += lo.abs().max(hi.abs());
    }
    total / m + 1.0
}

/// Kernel program skeleton over the feasible set (box + rows, no objective).
pub fn base_program(fs: &FeasibleSet) -> Result<ConvexProgram> {
    fs.validate()?;
    let mut prog = ConvexProgram::new(fs.n(), fs.lower.clone(), fs.upper.clone());
    for t in &fs.inequalities {
        prog.linear.push(LinearRow { coeffs: sparse(&t.coeffs), sense: RowSense::Le, rhs: t.rhs });
    }
    for t in &fs.equalities {
        prog.linear.push(LinearRow { coeffs: sparse(&t.coeffs), sense: RowSense::Eq, rhs: t.rhs });
    }
    Ok(prog)
}

/// Solves a kernel program honoring the instance's integrality flags; extra
/// kernel variables (beyond the feasible set's) are continuous.
pub(crate) fn solve_mixed_for(
    instance: &DfsoInstance,
    prog: &ConvexProgram,
) -> Result<(Vec<f64>, f64)> {
    let mut flags = instance.feasible.integer_flags();
    flags.resize(prog.n, false);
    if flags.iter().any(|&b| b) {
        let sol = crate::solve::bb::solve_mixed(prog, &flags, 100_000)?;
        Ok((sol.x, sol.objective))
    } else {
        let sol = solve_convex(prog)?;
        Ok((sol.x, sol.objective))
    }
}

/// Exact 0/1 knapsack dynamic program over integer weights. Expects the
/// canonical knapsack shape: all variables binary, one capacity inequality
/// with nonnegative integer coefficients; values are the per-variable total
/// utility coefficients.
fn knapsack_v_star(instance: &DfsoInstance) -> Result<f64> {
    let fs = &instance.feasible;
    let n = fs.n();
    if fs.inequalities.len() != 1 || !fs.equalities.is_empty() {
        return Err(Error::unsupported("knapsack dynamic program expects exactly one capacity row"));
    }
    let cap_row = &fs.inequalities[0];
    let mut weights = Vec::with_capacity(n);
    for &w in &cap_row.coeffs {
        if w < 0.0 || (w - w.round()).abs() > 1e-9 {
            return Err(Error::domain("knapsack weights must be nonnegative integers"));
        }
        weights.push(w.round() as usize);
    }
    if cap_row.rhs < 0.0 {
        return Err(Error::infeasible("negative knapsack capacity"));
    }
    let mut capacity = cap_row.rhs.floor() as usize;

    // Per-variable value: total utility coefficient summed over scenarios.
    let mut values = vec![0.0f64; n];
    for s in instance.population.scenarios() {
        let (combiner, pieces) = instance.utility.pieces(s);
        if combiner != PieceCombiner::Single {
            return Err(Error::unsupported("knapsack dynamic program needs linear utility"));
        }
        for (j, &c) in pieces[0].0.iter().enumerate() {
            values[j] += c;
        }
    }

    // Honor forced selections from the bounds.
    let mut base_value = 0.0;
    let mut free: Vec<usize> = Vec::new();
    for j in 0..n {
        if fs.lower[j] > 0.5 {
            if weights[j] > capacity {
                return Err(Error::infeasible("forced knapsack item exceeds capacity"));
            }
            capacity -= weights[j];
            base_value += values[j];
        } else if fs.upper[j] >= 0.5 {
            free.push(j);
        }
    }

    let mut dp = vec![f64::NEG_INFINITY; capacity + 1];
    dp[0] = 0.0;
    for &j in &free {
        let w = weights[j];
        let v = values[j];
        if w > capacity {
            continue;
        }
        for c in (w..=capacity).rev() {
            if dp[c - w] > f64::NEG_INFINITY {
                dp[c] = dp[c].max(dp[c - w] + v);
            }
        }
    }
    let best = dp.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + base_value;
    Ok(-best / instance.population.len() as f64)
}

/// Least-squares coefficients via normal equations with a tiny ridge when
/// the Gram matrix is singular.
fn normal_equations(scenarios: &[Vec<f64>], responses: &[f64]) -> Result<Vec<f64>> {
    let n = scenarios[0].len();
    let mut gram = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    for (s, &y) in scenarios.iter().zip(responses) {
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] += s[i] * s[j];
            }
            rhs[i] += s[i] * y;
        }
    }
    match solve_spd(&gram, &rhs, n) {
        Some(x) => Ok(x),
        None => {
            for i in 0..n {
                gram[i * n + i] += 1e-10;
            }
            solve_spd(&gram, &rhs, n)
                .ok_or_else(|| Error::domain("normal equations singular even with ridge"))
        }
    }
}

/// Cholesky solve for a symmetric positive definite system; `None` when a
/// nonpositive pivot shows up.
pub(crate) fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 1e-14 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests;
