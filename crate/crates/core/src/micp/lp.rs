//! Deterministic LP-format emission and parsing.
//!
//! The grammar is a documented subset of the common LP file format with a
//! bracketed quadratic extension:
//!
//! ```text
//! \ model: <name>
//! Minimize
//!  obj: + 1 nu
//! Subject To
//!  band: + 0.5 x_0 - 1 x_1 <= 3.25
//!  epi_0_1: [ + 0.5 eta_0_1_0 ^ 2 ] - 1 nu <= 0
//!  bil_0_1: [ + 1 pi_0_1_0_0 * dv_0_1_0_0 ] - 1 nu <= 0
//! Bounds
//!  0 <= x_0 <= 1
//! Binaries
//!  z_0_1_0
//! Generals
//!  y_0
//! End
//! ```
//!
//! Every variable appears in `Bounds` in creation order, which makes
//! `parse_lp(emit_lp(m))` reconstruct `m` exactly (coefficients are printed
//! with Rust's shortest round-trip float formatting).

use super::{BilinearCon, ConSense, LinCon, ModelIr, QuadCon, VarId, VarKind};
use crate::{Error, Result};
use std::fmt::Write as _;

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn push_terms(out: &mut String, model: &ModelIr, terms: &[(VarId, f64)]) {
    for &(id, c) in terms {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {} {} {}", sign, fmt_f64(c.abs()), model.var(id).name);
    }
}

fn sense_str(sense: ConSense) -> &'static str {
    match sense {
        ConSense::Le => "<=",
        ConSense::Ge => ">=",
        ConSense::Eq => "=",
    }
}

/// Emits the model as deterministic LP text.
pub fn emit_lp(model: &ModelIr) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\\ model: {}", model.name);
    out.push_str("Minimize\n obj:");
    push_terms(&mut out, model, &model.objective);
    out.push('\n');
    out.push_str("Subject To\n");
    for c in &model.linear {
        let _ = write!(out, " {}:", c.name);
        push_terms(&mut out, model, &c.terms);
        let _ = writeln!(out, " {} {}", sense_str(c.sense), fmt_f64(c.rhs));
    }
    for c in &model.quadratic {
        let _ = write!(out, " {}: [", c.name);
        for &(id, w) in &c.quad {
            let sign = if w < 0.0 { '-' } else { '+' };
            let _ = write!(out, " {} {} {} ^ 2", sign, fmt_f64(w.abs()), model.var(id).name);
        }
        out.push_str(" ]");
        push_terms(&mut out, model, &c.lin);
        let _ = writeln!(out, " <= {}", fmt_f64(c.rhs));
    }
    for c in &model.bilinear {
        let _ = write!(out, " {}: [", c.name);
        for &(xid, yid, co) in &c.terms {
            let sign = if co < 0.0 { '-' } else { '+' };
            let _ = write!(
                out,
                " {} {} {} * {}",
                sign,
                fmt_f64(co.abs()),
                model.var(xid).name,
                model.var(yid).name
            );
        }
        out.push_str(" ]");
        push_terms(&mut out, model, &c.lin);
        let _ = writeln!(out, " <= {}", fmt_f64(c.rhs));
    }
    out.push_str("Bounds\n");
    for v in model.vars() {
        let _ = writeln!(out, " {} <= {} <= {}", fmt_f64(v.lb), v.name, fmt_f64(v.ub));
    }
    let binaries: Vec<&str> = model
        .vars()
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for name in binaries {
            let _ = writeln!(out, " {name}");
        }
    }
    let generals: Vec<&str> = model
        .vars()
        .iter()
        .filter(|v| v.kind == VarKind::Integer)
        .map(|v| v.name.as_str())
        .collect();
    if !generals.is_empty() {
        out.push_str("Generals\n");
        for name in generals {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Objective,
    Rows,
    Bounds,
    Binaries,
    Generals,
    Done,
}

struct Parser {
    name: String,
    objective: Vec<(String, f64)>,
    rows: Vec<RawRow>,
    bounds: Vec<(String, f64, f64)>,
    binaries: Vec<String>,
    generals: Vec<String>,
}

struct RawRow {
    name: String,
    quad: Vec<(String, f64)>,
    bilinear: Vec<(String, String, f64)>,
    lin: Vec<(String, f64)>,
    sense: ConSense,
    rhs: f64,
}

fn parse_num(tok: &str, line: usize) -> Result<f64> {
    match tok {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| Error::Parse { line, msg: format!("expected a number, got '{tok}'") }),
    }
}

/// Parses a signed term stream `(+|-) coeff name [^ 2 | * name]`... until a
/// sense token or exhaustion. Returns (lin, quad, bilinear, rest).
#[allow(clippy::type_complexity)]
fn parse_terms(
    toks: &[String],
    line: usize,
    in_bracket: bool,
) -> Result<(Vec<(String, f64)>, Vec<(String, f64)>, Vec<(String, String, f64)>, usize)> {
    let mut lin = Vec::new();
    let mut quad = Vec::new();
    let mut bilinear = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        if t == "]" {
            if !in_bracket {
                return Err(Error::Parse { line, msg: "unexpected ']'".into() });
            }
            return Ok((lin, quad, bilinear, i + 1));
        }
        if t == "<=" || t == ">=" || t == "=" {
            return Ok((lin, quad, bilinear, i));
        }
        let sign = match t.as_str() {
            "+" => 1.0,
            "-" => -1.0,
            _ => {
                return Err(Error::Parse { line, msg: format!("expected sign, got '{t}'") });
            }
        };
        let coeff = sign
            * parse_num(
                toks.get(i + 1)
                    .ok_or(Error::Parse { line, msg: "missing coefficient".into() })?,
                line,
            )?;
        let name = toks
            .get(i + 2)
            .ok_or(Error::Parse { line, msg: "missing variable name".into() })?
            .clone();
        // Lookahead for ^ 2 or * other.
        if toks.get(i + 3).map(|s| s.as_str()) == Some("^") {
            if toks.get(i + 4).map(|s| s.as_str()) != Some("2") {
                return Err(Error::Parse { line, msg: "only squares are supported".into() });
            }
            quad.push((name, coeff));
            i += 5;
        } else if toks.get(i + 3).map(|s| s.as_str()) == Some("*") {
            let other = toks
                .get(i + 4)
                .ok_or(Error::Parse { line, msg: "missing product variable".into() })?
                .clone();
            bilinear.push((name, other, coeff));
            i += 5;
        } else {
            lin.push((name, coeff));
            i += 3;
        }
    }
    if in_bracket {
        return Err(Error::Parse { line, msg: "unterminated '['".into() });
    }
    Ok((lin, quad, bilinear, toks.len()))
}

/// Parses LP text back into a model; inverse of [`emit_lp`] on its output.
pub fn parse_lp(text: &str) -> Result<ModelIr> {
    let mut p = Parser {
        name: "model".into(),
        objective: Vec::new(),
        rows: Vec::new(),
        bounds: Vec::new(),
        binaries: Vec::new(),
        generals: Vec::new(),
    };
    let mut section = Section::Preamble;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('\\') {
            if let Some(name) = comment.trim().strip_prefix("model:") {
                p.name = name.trim().to_string();
            }
            continue;
        }
        let lower = trimmed.to_ascii_lowercase();
        match lower.as_str() {
            "minimize" => {
                section = Section::Objective;
                continue;
            }
            "subject to" => {
                section = Section::Rows;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "binaries" => {
                section = Section::Binaries;
                continue;
            }
            "generals" => {
                section = Section::Generals;
                continue;
            }
            "end" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        let toks: Vec<String> = trimmed.split_whitespace().map(|s| s.to_string()).collect();
        match section {
            Section::Preamble | Section::Done => {
                return Err(Error::Parse { line, msg: format!("unexpected content '{trimmed}'") });
            }
            Section::Objective => {
                let rest = trimmed
                    .strip_prefix("obj:")
                    .ok_or(Error::Parse { line, msg: "objective must be 'obj: ...'".into() })?;
                let toks: Vec<String> =
                    rest.split_whitespace().map(|s| s.to_string()).collect();
                let (lin, quad, bil, used) = parse_terms(&toks, line, false)?;
                if !quad.is_empty() || !bil.is_empty() || used != toks.len() {
                    return Err(Error::Parse { line, msg: "objective must be linear".into() });
                }
                p.objective = lin;
            }
            Section::Rows => {
                let colon = trimmed
                    .find(':')
                    .ok_or(Error::Parse { line, msg: "row needs 'name:'".into() })?;
                let name = trimmed[..colon].trim().to_string();
                let rest: Vec<String> =
                    trimmed[colon + 1..].split_whitespace().map(|s| s.to_string()).collect();
                let (mut lin, quad, bilinear, mut idx) = if rest.first().map(|s| s.as_str())
                    == Some("[")
                {
                    let (l, q, b, used) = parse_terms(&rest[1..], line, true)?;
                    if !l.is_empty() {
                        return Err(Error::Parse {
                            line,
                            msg: "bracket section must hold squares or products".into(),
                        });
                    }
                    (Vec::new(), q, b, used + 1)
                } else {
                    (Vec::new(), Vec::new(), Vec::new(), 0)
                };
                let (l2, q2, b2, used) = parse_terms(&rest[idx..], line, false)?;
                if !q2.is_empty() || !b2.is_empty() {
                    return Err(Error::Parse {
                        line,
                        msg: "nonlinear terms must live inside brackets".into(),
                    });
                }
                lin.extend(l2);
                idx += used;
                let sense = match rest.get(idx).map(|s| s.as_str()) {
                    Some("<=") => ConSense::Le,
                    Some(">=") => ConSense::Ge,
                    Some("=") => ConSense::Eq,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("expected sense, got {other:?}"),
                        })
                    }
                };
                let rhs = parse_num(
                    rest.get(idx + 1)
                        .ok_or(Error::Parse { line, msg: "missing rhs".into() })?,
                    line,
                )?;
                if idx + 2 != rest.len() {
                    return Err(Error::Parse { line, msg: "trailing tokens after rhs".into() });
                }
                if (!quad.is_empty() || !bilinear.is_empty()) && sense != ConSense::Le {
                    return Err(Error::Parse {
                        line,
                        msg: "bracketed rows must use '<='".into(),
                    });
                }
                p.rows.push(RawRow { name, quad, bilinear, lin, sense, rhs });
            }
            Section::Bounds => {
                // lb <= name <= ub
                if toks.len() != 5 || toks[1] != "<=" || toks[3] != "<=" {
                    return Err(Error::Parse {
                        line,
                        msg: "bounds must be 'lb <= name <= ub'".into(),
                    });
                }
                let lb = parse_num(&toks[0], line)?;
                let ub = parse_num(&toks[4], line)?;
                p.bounds.push((toks[2].clone(), lb, ub));
            }
            Section::Binaries => {
                p.binaries.extend(toks);
            }
            Section::Generals => {
                p.generals.extend(toks);
            }
        }
    }

    // Assemble the model: variables in Bounds order.
    let mut model = ModelIr::new(p.name);
    for (name, lb, ub) in &p.bounds {
        let kind = if p.binaries.iter().any(|b| b == name) {
            VarKind::Binary
        } else if p.generals.iter().any(|g| g == name) {
            VarKind::Integer
        } else {
            VarKind::Continuous
        };
        model.add_var(name.clone(), *lb, *ub, kind)?;
    }
    let resolve = |model: &ModelIr, name: &str| -> Result<VarId> {
        model
            .var_by_name(name)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("unknown variable '{name}'") })
    };
    for (name, c) in &p.objective {
        let id = resolve(&model, name)?;
        model.objective.push((id, *c));
    }
    for row in p.rows {
        let lin: Vec<(VarId, f64)> = row
            .lin
            .iter()
            .map(|(n, c)| resolve(&model, n).map(|id| (id, *c)))
            .collect::<Result<_>>()?;
        if !row.bilinear.is_empty() {
            let terms: Vec<(VarId, VarId, f64)> = row
                .bilinear
                .iter()
                .map(|(a, b, c)| {
                    Ok((resolve(&model, a)?, resolve(&model, b)?, *c))
                })
                .collect::<Result<_>>()?;
            model.bilinear.push(BilinearCon { name: row.name, terms, lin, rhs: row.rhs });
        } else if !row.quad.is_empty() {
            let quad: Vec<(VarId, f64)> = row
                .quad
                .iter()
                .map(|(n, c)| resolve(&model, n).map(|id| (id, *c)))
                .collect::<Result<_>>()?;
            model.quadratic.push(QuadCon { name: row.name, quad, lin, rhs: row.rhs });
        } else {
            model.linear.push(LinCon { name: row.name, terms: lin, sense: row.sense, rhs: row.rhs });
        }
    }
    model.validate()?;
    Ok(model)
}
