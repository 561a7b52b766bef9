//! Exact fairness measures on empirical one-dimensional utility distributions.
//!
//! All distributions are equal-weight empirical measures over finitely many
//! scalar outcomes. Probability-grid arithmetic (breakpoints, cell widths,
//! quantile-cell containment) is done in exact rationals; floating point
//! enters only at the final accumulation.

pub mod transport;

use crate::{Error, Rational, Result};
use num_traits::{One, ToPrimitive, Zero};

/// Empirical distribution with equal atom weights `1/m`.
///
/// Values are stored sorted ascending; ties keep their original input order
/// (stable sort), which makes quantiles deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    values: Vec<f64>,
}

impl EmpiricalDist {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("empirical distribution needs at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("empirical distribution values must be finite"));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        Ok(Self { values })
    }

    /// Number of atoms; at least 1 by construction.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Sorted atom values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// `F^{-1}(y) = inf { t : F(t) >= y }` for `y` in `(0, 1]`.
    ///
    /// For an `m`-atom empirical distribution this is the `ceil(y*m)`-th
    /// order statistic.
    pub fn quantile(&self, y: Rational) -> Result<f64> {
        if y <= Rational::zero() || y > Rational::one() {
            return Err(Error::domain(format!("quantile level {y} outside (0, 1]")));
        }
        let m = self.values.len() as i64;
        let idx = (y * Rational::from_integer(m)).ceil().to_integer();
        Ok(self.values[(idx - 1) as usize])
    }

    /// Right-continuous CDF `F(t) = #{values <= t} / m`.
    pub fn cdf(&self, t: f64) -> f64 {
        let count = self.values.partition_point(|&v| v <= t);
        count as f64 / self.values.len() as f64
    }
}

/// One cell of a [`MergedGrid`]: the half-open probability interval
/// `(breakpoints[i], breakpoints[i+1]]` together with the 1-based quantile
/// indices it selects in each group.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub width: Rational,
    /// 1-based order-statistic index into the first group.
    pub j_a: usize,
    /// 1-based order-statistic index into the second group.
    pub j_abar: usize,
}

/// Sorted distinct union of `{0} ∪ {i/m_a} ∪ {i/m_abar}` with the per-cell
/// quantile indices determined by exact interval containment.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedGrid {
    breakpoints: Vec<Rational>,
    cells: Vec<GridCell>,
}

impl MergedGrid {
    pub fn breakpoints(&self) -> &[Rational] {
        &self.breakpoints
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }
}

/// Builds the merged probability grid for a pair of group sizes.
pub fn merged_grid(m_a: usize, m_abar: usize) -> Result<MergedGrid> {
    if m_a == 0 || m_abar == 0 {
        return Err(Error::domain("merged grid requires nonempty groups"));
    }
    let mut points: Vec<Rational> = Vec::with_capacity(m_a + m_abar + 1);
    points.push(Rational::zero());
    for i in 1..=m_a {
        points.push(Rational::new(i as i64, m_a as i64));
    }
    for i in 1..=m_abar {
        points.push(Rational::new(i as i64, m_abar as i64));
    }
    points.sort();
    points.dedup();

    let mut cells = Vec::with_capacity(points.len() - 1);
    for w in points.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let j_a = containing_index(lo, hi, m_a)?;
        let j_abar = containing_index(lo, hi, m_abar)?;
        cells.push(GridCell { width: hi - lo, j_a, j_abar });
    }
    Ok(MergedGrid { breakpoints: points, cells })
}

/// Finds the 1-based `j` with `(lo, hi] ⊆ ((j-1)/m, j/m]`, exactly.
fn containing_index(lo: Rational, hi: Rational, m: usize) -> Result<usize> {
    let m_r = Rational::from_integer(m as i64);
    let j = (hi * m_r).ceil().to_integer();
    let j_lo = Rational::new(j - 1, m as i64);
    let j_hi = Rational::new(j, m as i64);
    if j_lo <= lo && hi <= j_hi && j >= 1 && j <= m as i64 {
        Ok(j as usize)
    } else {
        Err(Error::domain(format!(
            "grid cell ({lo}, {hi}] not contained in a single quantile interval of 1/{m}"
        )))
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::domain(format!("order q = {q} must be a finite real >= 1")));
    }
    Ok(())
}

pub(crate) fn pow_q(d: f64, q: f64) -> f64 {
    let a = d.abs();
    if q == 1.0 {
        a
    } else if q == 2.0 {
        a * a
    } else {
        a.powf(q)
    }
}

/// `W_q^q` between two empirical distributions via the merged-grid quantile
/// sum: cell widths are exact rationals, converted to floating point at the
/// final multiply.
pub fn wasserstein_q_pow(a: &EmpiricalDist, b: &EmpiricalDist, q: f64) -> Result<f64> {
    check_q(q)?;
    let grid = merged_grid(a.len(), b.len())?;
    let mut total = 0.0;
    for cell in grid.cells() {
        let qa = a.values()[cell.j_a - 1];
        let qb = b.values()[cell.j_abar - 1];
        let gap = pow_q(qa - qb, q);
        if gap != 0.0 {
            total += cell.width.to_f64().expect("small rational") * gap;
        }
    }
    Ok(total)
}

/// Type-1 Wasserstein distance as the `L_1` distance between CDFs:
/// a finite sum of `|F_a - F_b|` over the gaps between union support points.
pub fn wasserstein1_via_cdf(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<f64> {
    let pts = union_support(a, b);
    let ma = a.len() as f64;
    let mb = b.len() as f64;
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut total = 0.0;
    for w in pts.windows(2) {
        while ia < a.len() && a.values()[ia] <= w[0] {
            ia += 1;
        }
        while ib < b.len() && b.values()[ib] <= w[0] {
            ib += 1;
        }
        let diff = (ia as f64 / ma - ib as f64 / mb).abs();
        total += diff * (w[1] - w[0]);
    }
    Ok(total)
}

/// Kolmogorov–Smirnov distance `sup_t |F_a(t) - F_b(t)|`.
///
/// The CDF difference is piecewise constant and right-continuous, so the
/// supremum is attained at a union support point.
pub fn ksd(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<f64> {
    let pts = union_support(a, b);
    let ma = a.len() as f64;
    let mb = b.len() as f64;
    let mut ia = 0usize;
    let mut ib = 0usize;
    let mut sup = 0.0f64;
    for &t in &pts {
        while ia < a.len() && a.values()[ia] <= t {
            ia += 1;
        }
        while ib < b.len() && b.values()[ib] <= t {
            ib += 1;
        }
        sup = sup.max((ia as f64 / ma - ib as f64 / mb).abs());
    }
    Ok(sup)
}

/// Binary demographic parity `|P_a(0) - P_b(0)|`.
pub fn demographic_parity(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<f64> {
    for d in [a, b] {
        if d.values().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::domain("demographic parity requires outcomes in {0, 1}"));
        }
    }
    let pa = a.values().iter().filter(|&&v| v == 0.0).count() as f64 / a.len() as f64;
    let pb = b.values().iter().filter(|&&v| v == 0.0).count() as f64 / b.len() as f64;
    Ok((pa - pb).abs())
}

/// Exact optimal value of the balanced transportation problem over the
/// `m_a x m_b` cost matrix `|v_i - v_j|^q` with marginals `1/m_a`, `1/m_b`.
///
/// Independent of the merged-grid quantile route: solves the scaled
/// integer-flow problem with a successive-shortest-path algorithm.
pub fn ot_bruteforce(a: &EmpiricalDist, b: &EmpiricalDist, q: f64) -> Result<f64> {
    Ok(ot_bruteforce_plan(a, b, q)?.cost)
}

/// Like [`ot_bruteforce`] but returns the full solution (plan and dual
/// potentials), used by certificate constructions and plan-shape checks.
pub fn ot_bruteforce_plan(
    a: &EmpiricalDist,
    b: &EmpiricalDist,
    q: f64,
) -> Result<transport::TransportSolution> {
    check_q(q)?;
    let (na, nb) = (a.len(), b.len());
    if na.saturating_mul(nb) > 10_000 {
        return Err(Error::resource(format!(
            "transport instance {na}x{nb} exceeds the 10,000-cell brute-force guard"
        )));
    }
    let mut cost = vec![0.0; na * nb];
    for (i, &va) in a.values().iter().enumerate() {
        for (j, &vb) in b.values().iter().enumerate() {
            cost[i * nb + j] = pow_q(va - vb, q);
        }
    }
    Ok(transport::solve_transport(&cost, na, nb))
}

/// Coefficients of the KSD/Wasserstein sandwich bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsdBoundCoeffs {
    /// Smallest support point across the pair.
    pub t1: f64,
    /// Largest support point across the pair (`sup { t : F(t) < 1 }`).
    pub t2: f64,
    /// Lebesgue measure of the set where `|F_a - F_b|` attains its supremum.
    pub delta_measure: f64,
    /// Smallest breaking-point width of the quantile difference. The
    /// bound `WD_q <= eta^{(1-q)/q} WD_1` needs `eta <= w_j` for every
    /// width, so the minimum is the coefficient that makes it valid.
    pub eta: f64,
}

/// Sandwich bounds `lower <= KSD(a, b) <= upper` derived from `WD_q`.
///
/// `lower = WD_q / (eta^{(1-q)/q} (t2 - t1))`, `upper = WD_q / mu(Delta)`.
/// Degenerate cases (identical distributions, single shared atom) return
/// `(0, 0, coeffs)`.
pub fn ksd_wd_sandwich(
    a: &EmpiricalDist,
    b: &EmpiricalDist,
    q: f64,
) -> Result<(f64, f64, KsdBoundCoeffs)> {
    check_q(q)?;
    let t1 = a.min().min(b.min());
    let t2 = a.max().max(b.max());

    let (delta_measure, sup) = attainment_measure(a, b);
    let eta = min_breaking_width(a, b)?;
    let coeffs = KsdBoundCoeffs { t1, t2, delta_measure, eta };

    let wd_pow = wasserstein_q_pow(a, b, q)?;
    if wd_pow == 0.0 || t1 == t2 || sup == 0.0 {
        return Ok((0.0, 0.0, coeffs));
    }
    let wd = wd_pow.powf(1.0 / q);
    let lower = wd / (eta.powf((1.0 - q) / q) * (t2 - t1));
    let upper = wd / delta_measure;
    Ok((lower, upper, coeffs))
}

/// Lebesgue measure of `Delta = { t : |F_a - F_b|(t) = sup }` together with
/// the supremum itself. Attainment is tested with a `1e-12` tolerance.
/// Returns infinite measure when the distributions coincide (the difference
/// is identically zero).
fn attainment_measure(a: &EmpiricalDist, b: &EmpiricalDist) -> (f64, f64) {
    let pts = union_support(a, b);
    let ma = a.len() as f64;
    let mb = b.len() as f64;
    let mut diffs = Vec::with_capacity(pts.len());
    let (mut ia, mut ib) = (0usize, 0usize);
    for &t in &pts {
        while ia < a.len() && a.values()[ia] <= t {
            ia += 1;
        }
        while ib < b.len() && b.values()[ib] <= t {
            ib += 1;
        }
        diffs.push((ia as f64 / ma - ib as f64 / mb).abs());
    }
    let sup = diffs.iter().cloned().fold(0.0f64, f64::max);
    if sup == 0.0 {
        return (f64::INFINITY, 0.0);
    }
    let mut measure = 0.0;
    for k in 0..pts.len() - 1 {
        if diffs[k] >= sup - 1e-12 {
            measure += pts[k + 1] - pts[k];
        }
    }
    (measure, sup)
}

/// Smallest width among the maximal probability intervals on which the
/// quantile difference `F_a^{-1} - F_b^{-1}` is constant.
fn min_breaking_width(a: &EmpiricalDist, b: &EmpiricalDist) -> Result<f64> {
    let grid = merged_grid(a.len(), b.len())?;
    let mut widths: Vec<Rational> = Vec::new();
    let mut current_width = Rational::zero();
    let mut current_val = f64::NAN;
    for cell in grid.cells() {
        let val = a.values()[cell.j_a - 1] - b.values()[cell.j_abar - 1];
        if val == current_val {
            current_width += cell.width;
        } else {
            if current_width > Rational::zero() {
                widths.push(current_width);
            }
            current_width = cell.width;
            current_val = val;
        }
    }
    widths.push(current_width);
    let min = widths.iter().min().expect("at least one interval");
    Ok(min.to_f64().expect("small rational"))
}

/// Maximum pairwise `W_q^q` over all unordered group pairs, with the
/// attaining pair (first one in lexicographic order on ties).
pub fn wd_fairness(groups: &[EmpiricalDist], q: f64) -> Result<(f64, (usize, usize))> {
    if groups.len() < 2 {
        return Err(Error::domain("fairness needs at least two groups"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = (0, 1);
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let w = wasserstein_q_pow(&groups[i], &groups[j], q)?;
            if w > best {
                best = w;
                arg = (i, j);
            }
        }
    }
    Ok((best, arg))
}

/// Maximum pairwise KSD over all unordered group pairs.
pub fn ksd_fairness(groups: &[EmpiricalDist]) -> Result<f64> {
    if groups.len() < 2 {
        return Err(Error::domain("fairness needs at least two groups"));
    }
    let mut best = 0.0f64;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            best = best.max(ksd(&groups[i], &groups[j])?);
        }
    }
    Ok(best)
}

/// Maximum pairwise demographic parity; errors if any group is non-binary.
pub fn dp_fairness(groups: &[EmpiricalDist]) -> Result<f64> {
    if groups.len() < 2 {
        return Err(Error::domain("fairness needs at least two groups"));
    }
    let mut best = 0.0f64;
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            best = best.max(demographic_parity(&groups[i], &groups[j])?);
        }
    }
    Ok(best)
}

fn union_support(a: &EmpiricalDist, b: &EmpiricalDist) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::with_capacity(a.len() + b.len());
    pts.extend_from_slice(a.values());
    pts.extend_from_slice(b.values());
    pts.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    pts.dedup();
    pts
}

#[cfg(test)]
mod tests;
