//! Built-in model registry and the plain-text model-file loader.
//!
//! A model file is a sequence of `[section]` headers followed by
//! `key = value` entries. Values are expression strings, numbers, booleans
//! or (nested) bracket arrays whose leaves are expressions; arrays may span
//! lines until their brackets balance. `#` starts a comment. The complete
//! grammar lives in `docs/model-format.md`.

use std::path::Path;

use crate::algebroid::{self, AlgebroidSpec};
use crate::constraints::{ConstraintSpec, MechanicalHamiltonian};
use crate::expr::{self, Expr};
use crate::mechanics::{hamiltonian_vars, lagrangian_vars, Method};
use crate::rng::{Rng, SAMPLING_SEED};
use crate::{Error, Result};

/// Built-in models shipped as files with the crate.
const BUILTINS: &[(&str, &str)] = &[
    (
        "broken-jacobi",
        include_str!("../models/broken-jacobi.model"),
    ),
    ("canonical-tm", include_str!("../models/canonical-tm.model")),
    ("sleigh", include_str!("../models/sleigh.model")),
    ("so3-top", include_str!("../models/so3-top.model")),
    ("vac-particle", include_str!("../models/vac-particle.model")),
];

/// Names of all registered built-ins, in deterministic (sorted) order.
pub fn list_models() -> Vec<&'static str> {
    BUILTINS.iter().map(|(name, _)| *name).collect()
}

/// Source text of a built-in model.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
}

/// Default run configuration carried by a model file.
#[derive(Debug, Clone)]
pub struct RunDefaults {
    pub x0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub mu0: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub method: Method,
}

/// Structure residuals computed at load time (informative, not enforced).
#[derive(Debug, Clone)]
pub struct StructureReport {
    pub skew: f64,
    pub almost_lie: Option<f64>,
    /// `None` when the skew precondition fails.
    pub jacobiator: Option<f64>,
}

impl StructureReport {
    /// Strongest subclass supported by the residuals at the standard
    /// tolerance.
    pub fn classification(&self) -> &'static str {
        let tol = algebroid::STRUCTURE_TOL;
        if self.skew > tol {
            return "general algebroid";
        }
        match (self.almost_lie, self.jacobiator) {
            (Some(al), Some(jac)) if al <= tol && jac <= tol => "Lie algebroid",
            (Some(al), _) if al <= tol => "almost-Lie algebroid",
            _ => "skew-algebroid",
        }
    }
}

/// Fully validated bundle of objects loaded from a model file.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub name: String,
    pub spec: AlgebroidSpec,
    pub constraint: Option<ConstraintSpec>,
    pub mechanical: Option<MechanicalHamiltonian>,
    pub hamiltonian: Option<Expr>,
    pub lagrangian: Option<Expr>,
    pub defaults: RunDefaults,
    pub report: StructureReport,
}

/// Load a model from a file on disk.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let src = std::fs::read_to_string(path)?;
    load_source(&src)
}

/// Load a built-in model by name.
pub fn load_builtin(name: &str) -> Result<LoadedModel> {
    let src = builtin_source(name)
        .ok_or_else(|| Error::InvariantViolation(format!("no built-in model named `{name}`")))?;
    load_source(src)
}

/// Resolve a CLI model argument: a built-in name first, a path otherwise.
pub fn resolve(name_or_path: &str) -> Result<LoadedModel> {
    if builtin_source(name_or_path).is_some() {
        load_builtin(name_or_path)
    } else {
        load_model(Path::new(name_or_path))
    }
}

// ---------------------------------------------------------------------------
// File parsing
// ---------------------------------------------------------------------------

#[derive(Debug)]
struct Entry {
    line: usize,
    value: String,
}

#[derive(Debug, Default)]
struct Section {
    entries: Vec<(String, Entry)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, e)| e)
    }
}

fn parse_err(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::ModelParse {
        line,
        col,
        msg: msg.into(),
    }
}

fn split_sections(src: &str) -> Result<Vec<(String, Section)>> {
    let mut sections: Vec<(String, Section)> = Vec::new();
    let mut pending: Option<(String, usize, String)> = None; // key, line, buffer
    let mut depth = 0i32;

    let finish_pending = |pending: &mut Option<(String, usize, String)>,
                          sections: &mut Vec<(String, Section)>|
     -> Result<()> {
        if let Some((key, line, buffer)) = pending.take() {
            let section = sections
                .last_mut()
                .ok_or_else(|| parse_err(line, 1, "entry before any [section] header"))?;
            if section.1.get(&key).is_some() {
                return Err(parse_err(
                    line,
                    1,
                    format!("duplicate key `{key}` in [{}]", section.0),
                ));
            }
            section.1.entries.push((
                key,
                Entry {
                    line,
                    value: buffer.trim().to_string(),
                },
            ));
        }
        Ok(())
    };

    for (lineno, raw) in src.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('#') {
            Some(idx) => &raw[..idx],
            None => raw,
        };
        let trimmed = line.trim();
        if depth > 0 {
            // continuation of a bracketed value
            let (_, _, buffer) = pending.as_mut().expect("depth > 0 implies pending");
            buffer.push(' ');
            buffer.push_str(trimmed);
            depth += bracket_delta(trimmed);
            if depth < 0 {
                return Err(parse_err(lineno, 1, "unbalanced `]`"));
            }
            if depth == 0 {
                finish_pending(&mut pending, &mut sections)?;
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('[') && trimmed.ends_with(']') && !trimmed.contains('=') {
            let name = trimmed[1..trimmed.len() - 1].trim().to_string();
            if name.is_empty() {
                return Err(parse_err(lineno, 1, "empty section header"));
            }
            if sections.iter().any(|(n, _)| n == &name) {
                return Err(parse_err(lineno, 1, format!("duplicate section [{name}]")));
            }
            sections.push((name, Section::default()));
            continue;
        }
        let eq = trimmed.find('=').ok_or_else(|| {
            parse_err(
                lineno,
                1,
                format!("expected `key = value`, got `{trimmed}`"),
            )
        })?;
        let key = trimmed[..eq].trim().to_string();
        if key.is_empty() {
            return Err(parse_err(lineno, 1, "missing key before `=`"));
        }
        let value = trimmed[eq + 1..].trim().to_string();
        depth = bracket_delta(&value);
        if depth < 0 {
            return Err(parse_err(lineno, eq + 2, "unbalanced `]`"));
        }
        pending = Some((key, lineno, value));
        if depth == 0 {
            finish_pending(&mut pending, &mut sections)?;
        }
    }
    if depth != 0 {
        return Err(parse_err(
            src.lines().count(),
            1,
            "unclosed `[` at end of file",
        ));
    }
    finish_pending(&mut pending, &mut sections)?;
    Ok(sections)
}

fn bracket_delta(s: &str) -> i32 {
    let mut d = 0;
    for ch in s.chars() {
        match ch {
            '[' => d += 1,
            ']' => d -= 1,
            _ => {}
        }
    }
    d
}

/// Split a bracketed list into its top-level comma-separated items.
fn array_items(entry: &Entry) -> Result<Vec<String>> {
    let s = entry.value.trim();
    if !s.starts_with('[') || !s.ends_with(']') {
        return Err(parse_err(
            entry.line,
            1,
            format!("expected a bracketed array, got `{s}`"),
        ));
    }
    let inner = &s[1..s.len() - 1];
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    for (idx, ch) in inner.char_indices() {
        match ch {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                items.push(inner[start..idx].trim().to_string());
                start = idx + 1;
            }
            _ => {}
        }
    }
    let tail = inner[start..].trim();
    if !tail.is_empty() {
        items.push(tail.to_string());
    } else if !items.is_empty() {
        return Err(parse_err(entry.line, 1, "trailing comma in array"));
    }
    Ok(items)
}

fn sub_entry(entry: &Entry, value: String) -> Entry {
    Entry {
        line: entry.line,
        value,
    }
}

struct Loader<'a> {
    sections: Vec<(String, Section)>,
    origin: &'a str,
}

impl<'a> Loader<'a> {
    fn section(&self, name: &str) -> Option<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    fn require(&self, section: &str, key: &str) -> Result<&Entry> {
        self.section(section)
            .and_then(|s| s.get(key))
            .ok_or_else(|| {
                parse_err(
                    1,
                    1,
                    format!("{}: missing `{key}` in [{section}]", self.origin),
                )
            })
    }

    fn parse_expr(&self, entry: &Entry, vars: &[String]) -> Result<Expr> {
        let refs: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
        expr::parse(&entry.value, &refs).map_err(|e| match e {
            Error::Syntax { pos, msg } => parse_err(entry.line, pos, msg),
            Error::UnknownVariable(name) => {
                parse_err(entry.line, 1, format!("unknown variable `{name}`"))
            }
            other => other,
        })
    }

    fn parse_number(&self, entry: &Entry) -> Result<f64> {
        let e = self.parse_expr(entry, &[])?;
        e.eval(&[])
            .map_err(|err| parse_err(entry.line, 1, format!("not a constant: {err}")))
    }

    fn parse_usize(&self, entry: &Entry) -> Result<usize> {
        let v = self.parse_number(entry)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(parse_err(
                entry.line,
                1,
                format!("expected a non-negative integer, got {v}"),
            ));
        }
        Ok(v as usize)
    }

    fn parse_bool(&self, entry: &Entry) -> Result<bool> {
        match entry.value.as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(parse_err(
                entry.line,
                1,
                format!("expected true or false, got `{other}`"),
            )),
        }
    }

    fn parse_number_list(&self, entry: &Entry) -> Result<Vec<f64>> {
        array_items(entry)?
            .into_iter()
            .map(|item| self.parse_number(&sub_entry(entry, item)))
            .collect()
    }

    fn parse_expr_matrix(&self, entry: &Entry, vars: &[String]) -> Result<Vec<Vec<Expr>>> {
        array_items(entry)?
            .into_iter()
            .map(|row| {
                let row_entry = sub_entry(entry, row);
                array_items(&row_entry)?
                    .into_iter()
                    .map(|item| self.parse_expr(&sub_entry(entry, item), vars))
                    .collect()
            })
            .collect()
    }

    fn parse_expr_tensor3(&self, entry: &Entry, vars: &[String]) -> Result<Vec<Vec<Vec<Expr>>>> {
        array_items(entry)?
            .into_iter()
            .map(|block| self.parse_expr_matrix(&sub_entry(entry, block), vars))
            .collect()
    }
}

/// Load a model from source text.
pub fn load_source(src: &str) -> Result<LoadedModel> {
    let loader = Loader {
        sections: split_sections(src)?,
        origin: "model",
    };

    let name = loader.require("model", "name")?.value.clone();
    if name.is_empty() {
        return Err(parse_err(1, 1, "model name must be non-empty"));
    }
    let n = loader.parse_usize(loader.require("model", "n")?)?;
    let m = loader.parse_usize(loader.require("model", "m")?)?;
    let base = algebroid::base_vars(n);

    let sample_box: Vec<(f64, f64)> =
        match loader.section("model").and_then(|s| s.get("sample_box")) {
            Some(entry) => {
                let mut out = Vec::new();
                for item in array_items(entry)? {
                    let pair = loader.parse_number_list(&sub_entry(entry, item))?;
                    if pair.len() != 2 || pair[0] >= pair[1] {
                        return Err(parse_err(
                            entry.line,
                            1,
                            "sample_box entries must be [lo, hi] with lo < hi",
                        ));
                    }
                    out.push((pair[0], pair[1]));
                }
                out
            }
            None => vec![(-1.0, 1.0); n],
        };

    let zero = |_: usize| -> Expr {
        let refs: Vec<&str> = base.iter().map(|s| s.as_str()).collect();
        expr::parse("0", &refs).expect("zero literal")
    };
    let structure = loader.section("structure");
    let rho = match structure.and_then(|s| s.get("rho")) {
        Some(entry) => loader.parse_expr_matrix(entry, &base)?,
        None => (0..n).map(|_| (0..m).map(zero).collect()).collect(),
    };
    let sigma = match structure.and_then(|s| s.get("sigma")) {
        Some(entry) => loader.parse_expr_matrix(entry, &base)?,
        None => rho.clone(),
    };
    let c = match structure.and_then(|s| s.get("c")) {
        Some(entry) => loader.parse_expr_tensor3(entry, &base)?,
        None => (0..m)
            .map(|_| (0..m).map(|_| (0..m).map(zero).collect()).collect())
            .collect(),
    };
    let spec = AlgebroidSpec::new(n, m, rho, sigma, c, sample_box)?;

    let hvars = hamiltonian_vars(n, m);
    let lvars = lagrangian_vars(n, m);
    let mut hamiltonian = match loader.section("hamiltonian").and_then(|s| s.get("h")) {
        Some(entry) => Some(loader.parse_expr(entry, &hvars)?),
        None => None,
    };
    let lagrangian = match loader.section("lagrangian").and_then(|s| s.get("l")) {
        Some(entry) => Some(loader.parse_expr(entry, &lvars)?),
        None => None,
    };

    let mechanical = match loader.section("metric") {
        Some(section) => {
            let ginv_entry = section
                .get("ginv")
                .ok_or_else(|| parse_err(1, 1, "[metric] requires `ginv`"))?;
            let ginv = loader.parse_expr_matrix(ginv_entry, &base)?;
            let v = match section.get("v") {
                Some(entry) => loader.parse_expr(entry, &base)?,
                None => {
                    let refs: Vec<&str> = base.iter().map(|s| s.as_str()).collect();
                    expr::parse("0", &refs).expect("zero literal")
                }
            };
            Some(MechanicalHamiltonian::new(&spec, ginv, v)?)
        }
        None => None,
    };

    // the metric induces H when no explicit Hamiltonian is given; when both
    // are present they must agree on sampled points
    match (&hamiltonian, &mechanical) {
        (None, Some(mech)) => hamiltonian = Some(mech.hamiltonian().clone()),
        (Some(h), Some(mech)) => {
            let mut rng = Rng::new(SAMPLING_SEED ^ 0x0007_AB1E);
            for x in spec.sample_points(25) {
                let xi = rng.uniform_vec(m, -1.0, 1.0);
                let mut env = x.clone();
                env.extend_from_slice(&xi);
                let a = h.eval(&env)?;
                let b = mech.hamiltonian().eval(&env)?;
                if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                    return Err(Error::InvariantViolation(format!(
                        "explicit hamiltonian disagrees with the metric-induced one by {:e}",
                        (a - b).abs()
                    )));
                }
            }
        }
        _ => {}
    }

    let constraint = match loader.section("constraints") {
        Some(section) => {
            let phi = match section.get("phi") {
                Some(entry) => array_items(entry)?
                    .into_iter()
                    .map(|item| loader.parse_expr(&sub_entry(entry, item), &lvars))
                    .collect::<Result<Vec<_>>>()?,
                None => vec![],
            };
            let frame = match section.get("frame") {
                Some(entry) => Some(loader.parse_expr_matrix(entry, &base)?),
                None => None,
            };
            let linear = match section.get("linear") {
                Some(entry) => loader.parse_bool(entry)?,
                None => false,
            };
            Some(ConstraintSpec::new(&spec, phi, frame, linear)?)
        }
        None => None,
    };

    let defaults_section = loader.section("defaults");
    let number_or = |key: &str, fallback: f64| -> Result<f64> {
        match defaults_section.and_then(|s| s.get(key)) {
            Some(entry) => loader.parse_number(entry),
            None => Ok(fallback),
        }
    };
    let list_or = |key: &str, len: usize| -> Result<Vec<f64>> {
        match defaults_section.and_then(|s| s.get(key)) {
            Some(entry) => {
                let v = loader.parse_number_list(entry)?;
                if v.len() != len {
                    return Err(parse_err(
                        entry.line,
                        1,
                        format!("`{key}` must have {len} entries (got {})", v.len()),
                    ));
                }
                Ok(v)
            }
            None => Ok(vec![0.0; len]),
        }
    };
    let r = constraint.as_ref().map_or(0, |c| c.r());
    let defaults = RunDefaults {
        x0: list_or("x0", n)?,
        xi0: list_or("xi0", m)?,
        mu0: list_or("mu0", r)?,
        t0: number_or("t0", 0.0)?,
        t1: number_or("t1", 10.0)?,
        dt: number_or("dt", 1e-3)?,
        method: match defaults_section.and_then(|s| s.get("method")) {
            Some(entry) => entry
                .value
                .parse::<Method>()
                .map_err(|e| parse_err(entry.line, 1, e.to_string()))?,
            None => Method::Rk4,
        },
    };

    let skew = algebroid::skew_residual(&spec)?;
    let almost_lie = Some(algebroid::almost_lie_residual(&spec)?);
    let jacobiator = if skew <= algebroid::STRUCTURE_TOL {
        Some(algebroid::jacobiator_residual(&spec)?)
    } else {
        None
    };
    let report = StructureReport {
        skew,
        almost_lie,
        jacobiator,
    };

    Ok(LoadedModel {
        name,
        spec,
        constraint,
        mechanical,
        hamiltonian,
        lagrangian,
        defaults,
        report,
    })
}

#[cfg(test)]
mod tests;
