//! Solver-agnostic mixed-integer convex models of the Wasserstein fairness
//! epigraph: the four exact formulations, the KSD sublevel formulation,
//! valid inequalities, McCormick blocks, and LP-format emission/parsing.

mod builders;
mod certify;
mod lp;

pub use builders::{
    build_aggregate_quantile, build_complementary, build_discretized, build_ksd_sublevel,
    build_quantile, build_vanilla, ksd_level_grid, relaxation_floor, BuildOptions,
};
pub use certify::{check_model, complete_at, Assignment};
pub use lp::{emit_lp, parse_lp};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The exact formulations of the fairness epigraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Vanilla,
    Discretized,
    Complementary,
    Quantile,
    AggregateQuantile,
    KsdSublevel,
}

impl Formulation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::Vanilla => "vanilla",
            Formulation::Discretized => "discretized",
            Formulation::Complementary => "complementary",
            Formulation::Quantile => "quantile",
            Formulation::AggregateQuantile => "aggregate-quantile",
            Formulation::KsdSublevel => "ksd-sublevel",
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Formulation::Vanilla),
            "discretized" => Ok(Formulation::Discretized),
            "complementary" => Ok(Formulation::Complementary),
            "quantile" => Ok(Formulation::Quantile),
            "aggregate-quantile" => Ok(Formulation::AggregateQuantile),
            "ksd-sublevel" => Ok(Formulation::KsdSublevel),
            other => Err(Error::domain(format!("unknown formulation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

/// Index of a variable within a [`ModelIr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct VarDef {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConSense {
    Le,
    Ge,
    Eq,
}

/// Linear constraint `sum coeff * var (sense) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinCon {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: ConSense,
    pub rhs: f64,
}

/// Convex epigraph row `sum w_k var_k^2 + sum lin <= rhs` with `w_k > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadCon {
    pub name: String,
    pub quad: Vec<(VarId, f64)>,
    pub lin: Vec<(VarId, f64)>,
    pub rhs: f64,
}

/// Bilinear row `sum c_k x_k y_k + sum lin <= rhs`; nonconvex, only the
/// vanilla formulation emits these.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearCon {
    pub name: String,
    pub terms: Vec<(VarId, VarId, f64)>,
    pub lin: Vec<(VarId, f64)>,
    pub rhs: f64,
}

/// Solver-agnostic model: variables, linear rows, convex epigraph rows,
/// bilinear rows, and a minimized linear objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelIr {
    pub name: String,
    vars: Vec<VarDef>,
    name_index: BTreeMap<String, usize>,
    pub linear: Vec<LinCon>,
    pub quadratic: Vec<QuadCon>,
    pub bilinear: Vec<BilinearCon>,
    /// Minimized objective `sum coeff * var`.
    pub objective: Vec<(VarId, f64)>,
}

impl ModelIr {
    pub fn new(name: impl Into<String>) -> Self {
        ModelIr {
            name: name.into(),
            vars: Vec::new(),
            name_index: BTreeMap::new(),
            linear: Vec::new(),
            quadratic: Vec::new(),
            bilinear: Vec::new(),
            objective: Vec::new(),
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lb: f64,
        ub: f64,
        kind: VarKind,
    ) -> Result<VarId> {
        let name = name.into();
        if self.name_index.contains_key(&name) {
            return Err(Error::domain(format!("duplicate variable name '{name}'")));
        }
        if kind == VarKind::Binary && (lb != 0.0 || ub != 1.0) {
            return Err(Error::domain(format!("binary variable '{name}' must have bounds [0,1]")));
        }
        if lb > ub {
            return Err(Error::domain(format!("crossed bounds on '{name}'")));
        }
        let id = VarId(self.vars.len());
        self.name_index.insert(name.clone(), id.0);
        self.vars.push(VarDef { name, lb, ub, kind });
        Ok(id)
    }

    pub fn var(&self, id: VarId) -> &VarDef {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[VarDef] {
        &self.vars
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.name_index.get(name).map(|&i| VarId(i))
    }

    pub fn add_lin(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: ConSense,
        rhs: f64,
    ) {
        self.linear.push(LinCon { name: name.into(), terms, sense, rhs });
    }

    pub fn binary_count(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn continuous_count(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Continuous).count()
    }

    pub fn constraint_count(&self) -> usize {
        self.linear.len() + self.quadratic.len() + self.bilinear.len()
    }

    /// Structural sanity: unique names hold by construction; checks that
    /// every referenced variable exists and binaries have unit bounds.
    pub fn validate(&self) -> Result<()> {
        let check = |id: VarId| -> Result<()> {
            if id.0 >= self.vars.len() {
                return Err(Error::domain("constraint references unknown variable"));
            }
            Ok(())
        };
        for c in &self.linear {
            for &(id, _) in &c.terms {
                check(id)?;
            }
        }
        for c in &self.quadratic {
            for &(id, _) in c.quad.iter().chain(&c.lin) {
                check(id)?;
            }
        }
        for c in &self.bilinear {
            for &(a, b, _) in &c.terms {
                check(a)?;
                check(b)?;
            }
            for &(id, _) in &c.lin {
                check(id)?;
            }
        }
        for &(id, _) in &self.objective {
            check(id)?;
        }
        for v in &self.vars {
            if v.kind == VarKind::Binary && (v.lb != 0.0 || v.ub != 1.0) {
                return Err(Error::domain(format!("binary '{}' has non-unit bounds", v.name)));
            }
        }
        Ok(())
    }
}

/// McCormick block for `psi = kappa * nu` with `kappa` in a two-point set
/// (binary in all our uses) and `nu` boxed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCormickBlock {
    pub psi: VarId,
    pub kappa: VarId,
    pub nu: VarId,
    pub kappa_bounds: (f64, f64),
    pub nu_bounds: (f64, f64),
}

impl McCormickBlock {
    /// Emits the four McCormick inequalities into `model`, named
    /// `mc<1..4>_<tag>`.
    pub fn emit(&self, model: &mut ModelIr, tag: &str) {
        let (kl, ku) = self.kappa_bounds;
        let (nl, nu) = self.nu_bounds;
        let (p, k, v) = (self.psi, self.kappa, self.nu);
        // psi >= kl*nu + nl*kappa - kl*nl
        model.add_lin(
            format!("mc1_{tag}"),
            vec![(p, 1.0), (v, -kl), (k, -nl)],
            ConSense::Ge,
            -kl * nl,
        );
        // psi >= ku*nu + nu_up*kappa - ku*nu_up
        model.add_lin(
            format!("mc2_{tag}"),
            vec![(p, 1.0), (v, -ku), (k, -nu)],
            ConSense::Ge,
            -ku * nu,
        );
        // psi <= ku*nu + nl*kappa - ku*nl
        model.add_lin(
            format!("mc3_{tag}"),
            vec![(p, 1.0), (v, -ku), (k, -nl)],
            ConSense::Le,
            -ku * nl,
        );
        // psi <= nu_up*kappa + kl*nu - kl*nu_up
        model.add_lin(
            format!("mc4_{tag}"),
            vec![(p, 1.0), (k, -nu), (v, -kl)],
            ConSense::Le,
            -kl * nu,
        );
    }
}

/// Metadata sidecar describing an emitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub formulation: Formulation,
    pub binaries: usize,
    pub continuous: usize,
    pub integers: usize,
    pub constraints: usize,
    pub largest_big_m: f64,
    pub q: f64,
    pub cuts: bool,
}

impl ModelMeta {
    pub fn for_model(
        model: &ModelIr,
        formulation: Formulation,
        big_m: &crate::instance::BigM,
        q: f64,
        cuts: bool,
    ) -> Self {
        ModelMeta {
            formulation,
            binaries: model.binary_count(),
            continuous: model.continuous_count(),
            integers: model
                .vars()
                .iter()
                .filter(|v| v.kind == VarKind::Integer)
                .count(),
            constraints: model.constraint_count(),
            largest_big_m: big_m.max(),
            q,
            cuts,
        }
    }
}
