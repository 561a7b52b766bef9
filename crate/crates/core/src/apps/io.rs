//! File formats: population and county CSVs, instance-spec JSON, and the
//! experiment outputs (trade-off CSV, traces, histogram data).
//!
//! Population CSV: header `f1,...,fK,group[,y]` (feature columns in order,
//! one group label per row, optional response column).
//! County CSV: header `county,population,seniors`.

use crate::apps::adapters::County;
use crate::instance::{
    DfsoInstance, EfficiencyModel, FeasibleSet, GroupedPopulation, LinearTerm, UtilityModel,
};
use crate::solve::IterRecord;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Reads a population CSV; returns the population and the responses when a
/// `y` column is present.
pub fn read_population_csv(path: &Path) -> Result<(GroupedPopulation, Option<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::input(format!("bad header: {e}")))?
        .clone();
    let mut feature_cols: Vec<(usize, usize)> = Vec::new();
    let mut group_col = None;
    let mut y_col = None;
    for (idx, name) in headers.iter().enumerate() {
        let name = name.trim();
        if name == "group" {
            group_col = Some(idx);
        } else if name == "y" {
            y_col = Some(idx);
        } else if let Some(num) = name.strip_prefix('f') {
            let k: usize = num
                .parse()
                .map_err(|_| Error::input(format!("unexpected column '{name}'")))?;
            feature_cols.push((k, idx));
        } else {
            return Err(Error::input(format!("unexpected column '{name}'")));
        }
    }
    let group_col =
        group_col.ok_or_else(|| Error::input("population CSV needs a 'group' column"))?;
    feature_cols.sort();
    for (expect, &(k, _)) in feature_cols.iter().enumerate() {
        if k != expect + 1 {
            return Err(Error::input("feature columns must be f1..fK without gaps"));
        }
    }
    let mut scenarios = Vec::new();
    let mut labels = Vec::new();
    let mut responses = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::input(format!("row {}: {e}", row_idx + 2)))?;
        let mut xi = Vec::with_capacity(feature_cols.len());
        for &(_, idx) in &feature_cols {
            let v: f64 = record
                .get(idx)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("row {}: bad feature value", row_idx + 2)))?;
            xi.push(v);
        }
        scenarios.push(xi);
        labels.push(record.get(group_col).unwrap_or("").trim().to_string());
        if let Some(yc) = y_col {
            let v: f64 = record
                .get(yc)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("row {}: bad response value", row_idx + 2)))?;
            responses.push(v);
        }
    }
    let population = GroupedPopulation::new(scenarios, labels)?;
    Ok((population, y_col.map(|_| responses)))
}

/// Writes a population CSV (with responses when provided).
pub fn write_population_csv(
    path: &Path,
    population: &GroupedPopulation,
    responses: Option<&[f64]>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))?;
    let kappa = population.dim();
    let mut header: Vec<String> = (1..=kappa).map(|k| format!("f{k}")).collect();
    header.push("group".into());
    if responses.is_some() {
        header.push("y".into());
    }
    writer.write_record(&header).map_err(|e| Error::input(e.to_string()))?;
    for (i, s) in population.scenarios().iter().enumerate() {
        let mut row: Vec<String> = s.iter().map(|v| format!("{v}")).collect();
        row.push(population.labels()[i].clone());
        if let Some(y) = responses {
            row.push(format!("{}", y[i]));
        }
        writer.write_record(&row).map_err(|e| Error::input(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a county CSV with header `county,population,seniors`.
pub fn read_counties_csv(path: &Path) -> Result<Vec<County>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::input(e.to_string()))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::input(format!("county CSV needs a '{name}' column")))
    };
    let (c_name, c_pop, c_sen) = (col("county")?, col("population")?, col("seniors")?);
    let mut counties = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::input(format!("row {}: {e}", row_idx + 2)))?;
        let parse_u64 = |idx: usize| -> Result<u64> {
            record
                .get(idx)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("row {}: bad integer", row_idx + 2)))
        };
        counties.push(County {
            name: record.get(c_name).unwrap_or("").trim().to_string(),
            population: parse_u64(c_pop)?,
            seniors: parse_u64(c_sen)?,
        });
    }
    if counties.is_empty() {
        return Err(Error::input("county CSV has no rows"));
    }
    Ok(counties)
}

/// JSON instance description combined with a population CSV by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub q: f64,
    /// Inefficiency level; use a huge value (for example `1e999`) for an
    /// unconstrained band.
    pub epsilon: f64,
    pub utility: UtilityModel,
    pub cost: crate::instance::CostKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub inequalities: Vec<LinearTerm>,
    #[serde(default)]
    pub equalities: Vec<LinearTerm>,
    #[serde(default)]
    pub integer: Vec<bool>,
    #[serde(default = "default_slack")]
    pub eff_abs_slack: f64,
}

fn default_slack() -> f64 {
    1e-9
}

pub fn read_instance_spec(path: &Path) -> Result<InstanceSpec> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::input(format!("bad instance spec {}: {e}", path.display())))
}

/// Builds the instance from a spec plus population data; `V*` is solved when
/// the band is finite.
pub fn build_instance(
    spec: &InstanceSpec,
    population: GroupedPopulation,
    responses: Option<Vec<f64>>,
) -> Result<DfsoInstance> {
    let needs_y = matches!(
        spec.cost,
        crate::instance::CostKind::AbsDeviation | crate::instance::CostKind::SquaredDeviation
    );
    let responses = if needs_y {
        responses.ok_or_else(|| Error::input("this cost kind needs a 'y' column"))?
    } else {
        Vec::new()
    };
    let mut eff = EfficiencyModel::new(spec.cost, responses, 0.0)?;
    eff.epsilon = spec.epsilon;
    eff.abs_slack = spec.eff_abs_slack;
    let fs = FeasibleSet {
        lower: spec.lower.clone(),
        upper: spec.upper.clone(),
        inequalities: spec.inequalities.clone(),
        equalities: spec.equalities.clone(),
        integer: spec.integer.clone(),
    };
    let mut inst =
        DfsoInstance::new(population, spec.utility.clone(), eff, fs, spec.q)?;
    if inst.efficiency.epsilon.is_finite() {
        inst.efficiency.v_star = Some(crate::instance::solve_v_star(&inst)?);
    }
    Ok(inst)
}

/// Writes an iteration trace as `iter,objective,wall_ms`.
pub fn write_trace_csv(path: &Path, trace: &[IterRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["iter", "objective", "wall_ms"])
        .map_err(|e| Error::input(e.to_string()))?;
    for rec in trace {
        writer
            .write_record([
                rec.iter.to_string(),
                format!("{}", rec.objective),
                format!("{}", rec.wall_ms),
            ])
            .map_err(|e| Error::input(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes histogram data `value,group,weight` for the utility outcomes at a
/// decision (weights are the atom masses `1/m_a`).
pub fn write_histogram_csv(path: &Path, instance: &DfsoInstance, x: &[f64]) -> Result<()> {
    let utils = instance.utilities(x)?;
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["value", "group", "weight"])
        .map_err(|e| Error::input(e.to_string()))?;
    for a in 0..instance.population.group_count() {
        let weight = 1.0 / instance.population.group_size(a) as f64;
        for &i in instance.population.group(a) {
            writer
                .write_record([
                    format!("{}", utils[i]),
                    instance.population.group_names()[a].clone(),
                    format!("{weight}"),
                ])
                .map_err(|e| Error::input(e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}
