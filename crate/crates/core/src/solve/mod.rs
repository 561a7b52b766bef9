//! Solvers: the alternating-minimization algorithm, the internal convex
//! kernel, Jensen and Gelbrich lower bounds, group moments, and the
//! tiny-instance exact oracle.

pub mod am;
pub mod bb;
pub mod bounds;
pub mod kernel;
pub mod moments;
pub mod oracle;
pub mod simplex;

pub use am::{
    am_solve, am_subproblem, comonotonic_matching, efficiency_optimum, AmOptions,
    SubproblemResult,
};
pub use bounds::{gelbrich_am, gelbrich_value, jensen_bound};
pub use moments::{group_moments, GroupMoments};
pub use oracle::{exact_oracle, OracleResult};

use crate::Rational;
use serde::{Deserialize, Serialize};

/// Fixed comonotonic matching: per group pair, the merged-grid cells with
/// their widths and the scenario indices realizing the group quantiles at
/// the cell's right endpoint.
#[derive(Debug, Clone)]
pub struct MatchingPlan {
    /// Decision the matching was computed at; piecewise utilities fix their
    /// active pieces here.
    pub reference_x: Vec<f64>,
    pub pairs: Vec<PairMatching>,
}

#[derive(Debug, Clone)]
pub struct PairMatching {
    pub a: usize,
    pub b: usize,
    /// `(width, scenario in C_a, scenario in C_b)` with global indices;
    /// widths sum to one.
    pub cells: Vec<(Rational, usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub wall_ms: f64,
}

/// Outcome of a solve: incumbent, fairness scores, bound values, and the
/// per-iteration objective trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// `WD_q^q` at the incumbent.
    pub objective: f64,
    pub wd_q_pow: f64,
    pub ksd: f64,
    /// Demographic parity where outcomes are binary.
    pub dp: Option<f64>,
    pub mean_cost: f64,
    pub jensen: Option<f64>,
    pub gelbrich: Option<f64>,
    pub trace: Vec<IterRecord>,
    pub status: SolveStatus,
}

impl SolveReport {
    /// Report skeleton with all fairness scores recomputed at `x`.
    pub fn scores(instance: &crate::instance::DfsoInstance, x: Vec<f64>) -> crate::Result<Self> {
        let dists = instance.group_dists(&x)?;
        let (wd, _) = crate::measures::wd_fairness(&dists, instance.q)?;
        let ksd = crate::measures::ksd_fairness(&dists)?;
        let dp = crate::measures::dp_fairness(&dists).ok();
        let mean_cost = instance.mean_cost(&x)?;
        Ok(SolveReport {
            x,
            objective: wd,
            wd_q_pow: wd,
            ksd,
            dp,
            mean_cost,
            jensen: None,
            gelbrich: None,
            trace: Vec::new(),
            status: SolveStatus::Converged,
        })
    }
}
