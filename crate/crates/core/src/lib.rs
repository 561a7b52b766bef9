//! Distributionally fair stochastic optimization (DFSO).
//!
//! This crate computes exact distributional fairness measures (Wasserstein,
//! Kolmogorov–Smirnov, demographic parity) over grouped finite populations,
//! builds the exact mixed-integer convex formulations of the Wasserstein
//! fairness epigraph as solver-agnostic models with LP-format emission, and
//! solves DFSO instances with an alternating-minimization algorithm plus
//! Jensen and Gelbrich lower-bound certificates.
//!
//! Module map:
//! - [`measures`]: empirical distributions and exact fairness measures,
//!   including the brute-force optimal-transport oracle.
//! - [`instance`]: problem data (populations, utility models, efficiency
//!   bands, feasible sets) and big-M derivation.
//! - [`micp`]: mixed-integer model builders, valid inequalities, McCormick
//!   blocks, and LP text emission/parsing.
//! - [`solve`]: the AM algorithm, the internal convex kernel, lower bounds,
//!   group moments, and the tiny-instance exact oracle.
//! - [`apps`]: problem adapters (regression, knapsack, allocation), synthetic
//!   populations, and the experiment runner.

pub mod apps;
pub mod error;
pub mod instance;
pub mod measures;
pub mod micp;
pub mod solve;

pub use error::Error;
pub use instance::{
    BigM, CostKind, DfsoInstance, EfficiencyModel, FeasibleSet, GroupedPopulation, UtilityModel,
};
pub use measures::{EmpiricalDist, KsdBoundCoeffs, MergedGrid};
pub use micp::{Formulation, ModelIr};
pub use solve::{GroupMoments, MatchingPlan, SolveReport, SolveStatus};

/// Exact rational used for probability-grid arithmetic.
pub type Rational = num_rational::Ratio<i64>;

/// `Result` alias with the crate error type.
pub type Result<T> = std::result::Result<T, Error>;
