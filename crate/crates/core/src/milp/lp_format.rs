//! CPLEX LP-format writer.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{LinearProgram, Relation, Sense, SolverError, VarKind};

/// Longest line emitted before wrapping; CPLEX readers accept 255.
const MAX_LINE: usize = 200;

/// Maps `name` onto the LP-format identifier alphabet `[A-Za-z0-9_]`.
///
/// Invalid characters become `_`; names that would start with a digit or
/// with `e`/`E` (which readers may take for an exponent) get an `x_` prefix.
/// Names already valid are returned unchanged.
pub fn sanitize_name(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if out.starts_with(|c: char| c.is_ascii_digit() || c == 'e' || c == 'E') || out.is_empty() {
        out.insert_str(0, "x_");
    }
    out
}

/// Renders `lp` as CPLEX LP text.
///
/// Fails with [`SolverError::InvalidName`] when two distinct variable or
/// row names collapse to the same identifier after sanitizing.
pub fn export_lp_file(lp: &LinearProgram) -> Result<String, SolverError> {
    lp.validate()?;
    let var_names = unique_names(lp.variables.iter().map(|v| v.name.as_str()))?;
    let row_names = unique_names(lp.constraints.iter().map(|c| c.name.as_str()))?;

    let mut out = String::new();
    out.push_str(match lp.sense {
        Sense::Maximize => "Maximize\n",
        Sense::Minimize => "Minimize\n",
    });
    let obj_terms: Vec<(usize, f64)> =
        lp.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| (j, *c)).collect();
    write_expr(&mut out, " obj:", &obj_terms, &var_names, None);

    out.push_str("Subject To\n");
    for (c, name) in lp.constraints.iter().zip(&row_names) {
        let terms: Vec<(usize, f64)> = c.terms.iter().map(|&(v, a)| (v.0, a)).collect();
        let op = match c.relation {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        };
        write_expr(&mut out, &format!(" {name}:"), &terms, &var_names, Some((op, c.rhs)));
    }

    out.push_str("Bounds\n");
    for (v, name) in lp.variables.iter().zip(&var_names) {
        let (l, u) = (v.lower, v.upper);
        if v.kind == VarKind::Binary && l == 0.0 && u == 1.0 {
            continue;
        }
        let line = match (l.is_finite(), u.is_finite()) {
            (false, false) => format!(" {name} free\n"),
            (true, true) if l == u => format!(" {name} = {}\n", num(l)),
            (true, true) => format!(" {} <= {name} <= {}\n", num(l), num(u)),
            (true, false) if l == 0.0 => continue,
            (true, false) => format!(" {name} >= {}\n", num(l)),
            (false, true) => format!(" -inf <= {name} <= {}\n", num(u)),
        };
        out.push_str(&line);
    }

    for (title, kind) in [("Generals", VarKind::Integer), ("Binaries", VarKind::Binary)] {
        let names: Vec<&str> =
            lp.variables.iter().zip(&var_names).filter(|(v, _)| v.kind == kind).map(|(_, n)| n.as_str()).collect();
        if names.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{title}");
        let mut line = String::new();
        for n in names {
            if line.len() + n.len() + 1 > MAX_LINE {
                let _ = writeln!(out, "{line}");
                line.clear();
            }
            line.push(' ');
            line.push_str(n);
        }
        let _ = writeln!(out, "{line}");
    }
    out.push_str("End\n");
    Ok(out)
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<Vec<String>, SolverError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for raw in names {
        let clean = sanitize_name(raw);
        if seen.contains(&clean) {
            return Err(SolverError::InvalidName(String::from(raw)));
        }
        seen.insert(clean.clone());
        out.push(clean);
    }
    Ok(out)
}

/// Shortest round-tripping decimal form of `x`.
fn num(x: f64) -> String {
    format!("{x}")
}

fn write_expr(out: &mut String, label: &str, terms: &[(usize, f64)], names: &[String], rhs: Option<(&str, f64)>) {
    let mut line = String::from(label);
    let mut first = true;
    let push = |line: &mut String, piece: String, out: &mut String| {
        if line.len() + piece.len() > MAX_LINE {
            out.push_str(line);
            out.push('\n');
            line.clear();
        }
        line.push_str(&piece);
    };
    for &(j, a) in terms {
        let piece = if first {
            first = false;
            format!(" {} {}", num(a), names[j])
        } else if a < 0.0 {
            format!(" - {} {}", num(-a), names[j])
        } else {
            format!(" + {} {}", num(a), names[j])
        };
        push(&mut line, piece, out);
    }
    if first {
        // Readers need at least one term; an empty expression is a zero.
        if let Some(n) = names.first() {
            push(&mut line, format!(" 0 {n}"), out);
        }
    }
    if let Some((op, b)) = rhs {
        push(&mut line, format!(" {op} {}", num(b)), out);
    }
    out.push_str(&line);
    out.push('\n');
}
