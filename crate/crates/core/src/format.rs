//! Problem file reader and writer.
//!
//! ```text
//! # comment
//! [constants]          # optional named constants
//! omega = pi/2
//!
//! [space]
//! dim = 2
//! gram_y = [[2, 0], [0, 1]]      # optional, identity by default
//!
//! [operator]
//! A = [[0, omega],
//!      [-omega, 0]]
//!
//! [nonlinearity]       # optional
//! params = 1           # number of parameters mu1..mud
//! mu0 = [0]            # distinguished parameter, zero by default
//! radius = 1/10        # half-width of the parameter box
//! smoothness = 1       # order k of the cutoff
//! f1 = u1*u2
//! f2 = (1 + 1/2*cos(2*pi*t))*u1^2
//!
//! [strip]
//! beta1 = -1/2
//! beta2 = 1/2
//!
//! [grid]
//! nt = 256
//!
//! [flags]
//! real = true
//! ```
//!
//! Values may span several lines while brackets or parentheses are open.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::expr::{is_reserved, ExprError, Scope, SymPoly};
use crate::poly::MultiPoly;
use crate::problem::{ProblemSource, ProblemSpec, TimeGrid};

struct Located<'a> {
    text: &'a str,
}

impl Located<'_> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }

    fn expr_error(&self, base: usize, e: ExprError) -> Error {
        self.error(base + e.offset, e.message)
    }
}

#[derive(Clone, Copy)]
struct Value<'a> {
    text: &'a str,
    offset: usize,
}

struct Statement<'a> {
    key_offset: usize,
    value: Value<'a>,
}

type Sections<'a> = BTreeMap<String, (usize, BTreeMap<String, Statement<'a>>)>;

const SECTIONS: &[&str] = &["constants", "space", "operator", "nonlinearity", "strip", "grid", "flags"];

fn blank_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_comment = false;
    for c in text.chars() {
        if c == '\n' {
            in_comment = false;
            out.push(c);
        } else if in_comment || c == '#' {
            in_comment = true;
            for _ in 0..c.len_utf8() {
                out.push(' ');
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn bracket_depth(s: &str) -> i64 {
    s.chars()
        .map(|c| match c {
            '[' | '(' => 1,
            ']' | ')' => -1,
            _ => 0,
        })
        .sum()
}

fn is_header(line: &str) -> Option<&str> {
    let t = line.trim();
    let inner = t.strip_prefix('[')?.strip_suffix(']')?;
    if !inner.is_empty() && inner.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
        Some(inner)
    } else {
        None
    }
}

fn split_statements<'a>(loc: &Located<'_>, clean: &'a str) -> Result<Sections<'a>> {
    let mut sections: Sections<'a> = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut line_starts = vec![0usize];
    for (i, b) in clean.bytes().enumerate() {
        if b == b'\n' {
            line_starts.push(i + 1);
        }
    }
    let line_end = |idx: usize| -> usize { line_starts.get(idx + 1).map_or(clean.len(), |&s| s - 1) };
    let mut idx = 0;
    while idx < line_starts.len() {
        let start = line_starts[idx];
        let end = line_end(idx);
        let line = &clean[start..end];
        let trimmed = line.trim();
        if trimmed.is_empty() {
            idx += 1;
            continue;
        }
        let lead = start + (line.len() - line.trim_start().len());
        if let Some(name) = is_header(line) {
            if !SECTIONS.contains(&name) {
                return Err(loc.error(lead, format!("unknown section [{name}]")));
            }
            if sections.contains_key(name) {
                return Err(loc.error(lead, format!("duplicate section [{name}]")));
            }
            sections.insert(name.to_string(), (lead, BTreeMap::new()));
            current = Some(name.to_string());
            idx += 1;
            continue;
        }
        let Some(section) = current.clone() else {
            return Err(loc.error(lead, "statement outside of a section"));
        };
        let Some(eq) = line.find('=') else {
            return Err(loc.error(lead, "expected 'key = value'"));
        };
        let key = line[..eq].trim();
        if key.is_empty() || !key.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err(loc.error(lead, format!("invalid key '{key}'")));
        }
        let value_start = start + eq + 1;
        let mut value_end = end;
        let mut depth = bracket_depth(&clean[value_start..value_end]);
        while depth > 0 {
            idx += 1;
            if idx >= line_starts.len() {
                return Err(loc.error(value_start, "unbalanced brackets"));
            }
            value_end = line_end(idx);
            depth = bracket_depth(&clean[value_start..value_end]);
        }
        if depth < 0 {
            return Err(loc.error(value_start, "unbalanced brackets"));
        }
        let raw = &clean[value_start..value_end];
        let skip = raw.len() - raw.trim_start().len();
        let value = Value {
            text: raw.trim(),
            offset: value_start + skip,
        };
        if value.text.is_empty() {
            return Err(loc.error(value_start, format!("missing value for '{key}'")));
        }
        let entry = sections.get_mut(&section).expect("section registered");
        if entry.1.contains_key(key) {
            return Err(loc.error(lead, format!("duplicate key '{key}'")));
        }
        entry.1.insert(key.to_string(), Statement { key_offset: lead, value });
        idx += 1;
    }
    Ok(sections)
}

/// Splits `[a, b, ...]` at top-level commas.
fn split_list<'a>(loc: &Located<'_>, v: Value<'a>) -> Result<Vec<Value<'a>>> {
    let t = v.text;
    if !t.starts_with('[') || !t.ends_with(']') {
        return Err(loc.error(v.offset, "expected a bracketed list"));
    }
    let inner_off = v.offset + 1;
    let inner = &t[1..t.len() - 1];
    let mut items = Vec::new();
    let mut depth = 0i64;
    let mut start = 0usize;
    let mut push = |s: usize, e: usize| -> Result<()> {
        let raw = &inner[s..e];
        let skip = raw.len() - raw.trim_start().len();
        if raw.trim().is_empty() {
            return Err(loc.error(inner_off + s, "empty list item"));
        }
        items.push(Value {
            text: raw.trim(),
            offset: inner_off + s + skip,
        });
        Ok(())
    };
    for (i, c) in inner.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                push(start, i)?;
                start = i + 1;
            }
            _ => {}
        }
    }
    if !inner.trim().is_empty() {
        push(start, inner.len())?;
    }
    Ok(items)
}

fn take<'s, 'a>(sections: &'s Sections<'a>, section: &str, key: &str) -> Option<&'s Statement<'a>> {
    sections.get(section).and_then(|(_, m)| m.get(key))
}

fn parse_usize(loc: &Located<'_>, v: Value<'_>) -> Result<usize> {
    v.text
        .parse::<usize>()
        .map_err(|_| loc.error(v.offset, format!("expected a non-negative integer, got '{}'", v.text)))
}

fn real_rational(loc: &Located<'_>, scope: &Scope, v: Value<'_>) -> Result<BigRational> {
    let c = scope.parse_constant(v.text).map_err(|e| loc.expr_error(v.offset, e))?;
    c.as_rational()
        .ok_or_else(|| loc.error(v.offset, "expected a real rational constant"))
}

/// Real numeric value; powers of pi are rounded to the nearest representable
/// rational only where an exact rational is required.
fn real_value(loc: &Located<'_>, scope: &Scope, v: Value<'_>) -> Result<BigRational> {
    let c = scope.parse_constant(v.text).map_err(|e| loc.expr_error(v.offset, e))?;
    if !c.im.is_zero() {
        return Err(loc.error(v.offset, "expected a real constant"));
    }
    match c.re.as_rational() {
        Some(r) => Ok(r),
        None => BigRational::from_float(c.re.to_f64()).ok_or_else(|| loc.error(v.offset, "constant is not finite")),
    }
}

fn parse_matrix(loc: &Located<'_>, scope: &Scope, v: Value<'_>, n: usize) -> Result<Vec<SymPoly>> {
    let rows = split_list(loc, v)?;
    if rows.len() != n {
        return Err(loc.error(v.offset, format!("expected {n} rows, found {}", rows.len())));
    }
    let mut out = Vec::with_capacity(n * n);
    for row in rows {
        let cols = split_list(loc, row)?;
        if cols.len() != n {
            return Err(loc.error(row.offset, format!("expected {n} columns, found {}", cols.len())));
        }
        for c in cols {
            out.push(scope.parse(c.text).map_err(|e| loc.expr_error(c.offset, e))?);
        }
    }
    Ok(out)
}

fn parse_gram(loc: &Located<'_>, scope: &Scope, v: Value<'_>, n: usize) -> Result<Vec<Vec<BigRational>>> {
    let rows = split_list(loc, v)?;
    if rows.len() != n {
        return Err(loc.error(v.offset, format!("expected {n} rows, found {}", rows.len())));
    }
    rows.into_iter()
        .map(|row| {
            let cols = split_list(loc, row)?;
            if cols.len() != n {
                return Err(loc.error(row.offset, format!("expected {n} columns, found {}", cols.len())));
            }
            cols.into_iter().map(|c| real_value(loc, scope, c)).collect()
        })
        .collect()
}

fn check_keys(loc: &Located<'_>, sections: &Sections<'_>, section: &str, allowed: &dyn Fn(&str) -> bool) -> Result<()> {
    if let Some((_, keys)) = sections.get(section) {
        for (k, st) in keys {
            if !allowed(k) {
                return Err(loc.error(st.key_offset, format!("unknown key '{k}' in [{section}]")));
            }
        }
    }
    Ok(())
}

/// Reads the exact source data without numeric validation.
pub fn parse_source(text: &str) -> Result<ProblemSource> {
    let loc = Located { text };
    let clean = blank_comments(text);
    let sections = split_statements(&loc, &clean)?;

    let mut constants = BTreeMap::new();
    if let Some((_, keys)) = sections.get("constants") {
        let mut ordered: Vec<(&String, &Statement<'_>)> = keys.iter().collect();
        ordered.sort_by_key(|(_, st)| st.key_offset);
        for (name, st) in ordered {
            if is_reserved(name) || name.starts_with(|c: char| c.is_ascii_digit()) {
                return Err(loc.error(st.key_offset, format!("'{name}' is reserved")));
            }
            let scope = Scope {
                constants: constants.clone(),
                ..Scope::default()
            };
            let value = scope
                .parse_constant(st.value.text)
                .map_err(|e| loc.expr_error(st.value.offset, e))?;
            constants.insert(name.clone(), value);
        }
    }
    let base = Scope {
        constants: constants.clone(),
        ..Scope::default()
    };

    check_keys(&loc, &sections, "space", &|k| matches!(k, "dim" | "gram_x" | "gram_y"))?;
    check_keys(&loc, &sections, "operator", &|k| k == "A")?;
    check_keys(&loc, &sections, "strip", &|k| matches!(k, "beta1" | "beta2"))?;
    check_keys(&loc, &sections, "grid", &|k| k == "nt")?;
    check_keys(&loc, &sections, "flags", &|k| k == "real")?;

    let dim_st = take(&sections, "space", "dim").ok_or_else(|| loc.error(0, "missing [space] dim"))?;
    let n = parse_usize(&loc, dim_st.value)?;
    if n == 0 {
        return Err(loc.error(dim_st.value.offset, "dimension must be positive"));
    }
    let gram_x = take(&sections, "space", "gram_x")
        .map(|st| parse_gram(&loc, &base, st.value, n))
        .transpose()?;
    let gram_y = take(&sections, "space", "gram_y")
        .map(|st| parse_gram(&loc, &base, st.value, n))
        .transpose()?;

    let params = match take(&sections, "nonlinearity", "params") {
        Some(st) => parse_usize(&loc, st.value)?,
        None => 0,
    };
    check_keys(&loc, &sections, "nonlinearity", &|k| {
        matches!(k, "params" | "mu0" | "radius" | "smoothness")
            || k.strip_prefix('f')
                .and_then(|r| r.parse::<usize>().ok())
                .is_some_and(|i| i >= 1 && i <= n && !k[1..].starts_with('0'))
    })?;
    let mu0 = match take(&sections, "nonlinearity", "mu0") {
        Some(st) => {
            let items = split_list(&loc, st.value)?;
            if items.len() != params {
                return Err(loc.error(st.value.offset, format!("mu0 has {} entries, expected {params}", items.len())));
            }
            items
                .into_iter()
                .map(|v| real_rational(&loc, &base, v))
                .collect::<Result<Vec<_>>>()?
        }
        None => vec![BigRational::zero(); params],
    };
    let radius = match take(&sections, "nonlinearity", "radius") {
        Some(st) => {
            let r = real_rational(&loc, &base, st.value)?;
            if !r.is_positive() {
                return Err(loc.error(st.value.offset, "radius must be positive"));
            }
            r
        }
        None => BigRational::new(BigInt::one(), BigInt::from(10)),
    };
    let smoothness = match take(&sections, "nonlinearity", "smoothness") {
        Some(st) => parse_usize(&loc, st.value)? as u32,
        None => 1,
    };

    let expr_scope = Scope {
        n_vars: n,
        n_params: params,
        allow_u: false,
        constants: constants.clone(),
    };
    let op_st = take(&sections, "operator", "A").ok_or_else(|| loc.error(0, "missing [operator] A"))?;
    let operator = parse_matrix(&loc, &expr_scope, op_st.value, n)?;

    let f_scope = Scope {
        allow_u: true,
        ..expr_scope.clone()
    };
    let has_f = (1..=n).any(|i| take(&sections, "nonlinearity", &format!("f{i}")).is_some());
    let nonlinearity = if has_f {
        let comps = (1..=n)
            .map(|i| match take(&sections, "nonlinearity", &format!("f{i}")) {
                Some(st) => f_scope.parse(st.value.text).map_err(|e| loc.expr_error(st.value.offset, e)),
                None => Ok(MultiPoly::zero(n, params)),
            })
            .collect::<Result<Vec<_>>>()?;
        Some(comps)
    } else {
        None
    };

    let b1 = take(&sections, "strip", "beta1").ok_or_else(|| loc.error(0, "missing [strip] beta1"))?;
    let b2 = take(&sections, "strip", "beta2").ok_or_else(|| loc.error(0, "missing [strip] beta2"))?;
    let beta1 = real_value(&loc, &base, b1.value)?;
    let beta2 = real_value(&loc, &base, b2.value)?;
    if beta1 >= beta2 {
        return Err(loc.error(b1.value.offset, "beta1 must be smaller than beta2"));
    }

    let nt = match take(&sections, "grid", "nt") {
        Some(st) => {
            let nt = parse_usize(&loc, st.value)?;
            TimeGrid::new(nt).map_err(|e| loc.error(st.value.offset, e.to_string()))?;
            nt
        }
        None => TimeGrid::DEFAULT_NT,
    };

    let data_real = operator.iter().all(MultiPoly::is_real) && nonlinearity.as_ref().is_none_or(|f| f.iter().all(MultiPoly::is_real));
    let real = match take(&sections, "flags", "real") {
        Some(st) => match st.value.text {
            "true" => {
                if !data_real {
                    return Err(loc.error(st.value.offset, "problem flagged real has complex coefficients"));
                }
                true
            }
            "false" => false,
            other => return Err(loc.error(st.value.offset, format!("expected true or false, got '{other}'"))),
        },
        None => data_real,
    };

    Ok(ProblemSource {
        dimension: n,
        params,
        gram_x,
        gram_y,
        operator,
        nonlinearity,
        mu0,
        radius,
        smoothness,
        beta1,
        beta2,
        nt,
        real,
    })
}

/// Parses and validates a problem file.
pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    ProblemSpec::from_source(parse_source(text)?)
}

fn rational_string(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn matrix_string(rows: Vec<Vec<String>>) -> String {
    let body: Vec<String> = rows.into_iter().map(|r| format!("[{}]", r.join(", "))).collect();
    format!("[{}]", body.join(",\n     "))
}

/// Canonical text form; `parse_source(serialize(src)) == src`.
pub fn serialize(src: &ProblemSource) -> String {
    let n = src.dimension;
    let mut out = String::new();
    out.push_str(&format!("[space]\ndim = {n}\n"));
    for (name, g) in [("gram_x", &src.gram_x), ("gram_y", &src.gram_y)] {
        if let Some(g) = g {
            let rows = g.iter().map(|r| r.iter().map(rational_string).collect()).collect();
            out.push_str(&format!("{name} = {}\n", matrix_string(rows)));
        }
    }
    let rows = (0..n)
        .map(|i| (0..n).map(|j| src.operator[i * n + j].to_string()).collect())
        .collect();
    out.push_str(&format!("\n[operator]\nA = {}\n", matrix_string(rows)));
    if src.params > 0 || src.nonlinearity.is_some() {
        out.push_str("\n[nonlinearity]\n");
        out.push_str(&format!("params = {}\n", src.params));
        if src.params > 0 {
            let mu0: Vec<String> = src.mu0.iter().map(rational_string).collect();
            out.push_str(&format!("mu0 = [{}]\n", mu0.join(", ")));
        }
        out.push_str(&format!("radius = {}\n", rational_string(&src.radius)));
        out.push_str(&format!("smoothness = {}\n", src.smoothness));
        if let Some(f) = &src.nonlinearity {
            for (i, p) in f.iter().enumerate() {
                out.push_str(&format!("f{} = {p}\n", i + 1));
            }
        }
    }
    out.push_str(&format!(
        "\n[strip]\nbeta1 = {}\nbeta2 = {}\n",
        rational_string(&src.beta1),
        rational_string(&src.beta2)
    ));
    out.push_str(&format!("\n[grid]\nnt = {}\n", src.nt));
    out.push_str(&format!("\n[flags]\nreal = {}\n", src.real));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
[constants]
alpha = 1/4
[space]
dim = 2
gram_y = [[2, 0], [0, 1]]
[operator]
A = [[alpha + 3/2*cos(2*pi*t), 1],
     [0, -sin(4*pi*t)]]   # trailing comment
[nonlinearity]
params = 1
f1 = u1*u2 + mu1*u1^2
f2 = -u1^2
[strip]
beta1 = -1
beta2 = 1/2
";

    #[test]
    fn parses_sample() {
        let src = parse_source(SAMPLE).unwrap();
        assert_eq!(src.dimension, 2);
        assert_eq!(src.params, 1);
        assert_eq!(src.nt, 256);
        assert!(src.real);
        let spec = ProblemSpec::from_source(src).unwrap();
        let a = spec.eval_operator(0.0);
        assert!((a[(0, 0)].re - 1.75).abs() < 1e-15);
    }

    #[test]
    fn round_trip_is_exact() {
        let src = parse_source(SAMPLE).unwrap();
        let text = serialize(&src);
        let again = parse_source(&text).unwrap();
        assert_eq!(src, again);
    }

    #[test]
    fn syntax_error_reports_position() {
        let text = "[space]\ndim = 1\n[operator]\nA = [[1 + * 2]]\n[strip]\nbeta1 = -1\nbeta2 = 1\n";
        match parse_source(text) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(column, 11);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tangency_violation_names_monomial() {
        let text = "[space]\ndim = 1\n[operator]\nA = [[1]]\n[nonlinearity]\nf1 = u1 + u1^2\n[strip]\nbeta1 = -1\nbeta2 = 1\n";
        match parse_problem(text) {
            Err(Error::TangencyViolation { component, monomial }) => {
                assert_eq!(component, 1);
                assert_eq!(monomial, "u1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tangency_is_checked_at_mu0() {
        let base = "[space]\ndim = 1\n[operator]\nA = [[1]]\n[nonlinearity]\nparams = 1\n";
        let ok = format!("{base}f1 = mu1*u1\n[strip]\nbeta1 = -1\nbeta2 = 1\n");
        assert!(parse_problem(&ok).is_ok());
        let bad = format!("{base}mu0 = [1/2]\nf1 = mu1*u1\n[strip]\nbeta1 = -1\nbeta2 = 1\n");
        assert!(matches!(parse_problem(&bad), Err(Error::TangencyViolation { .. })));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = "[space]\ndim = 1\nsize = 3\n[operator]\nA = [[1]]\n[strip]\nbeta1 = -1\nbeta2 = 1\n";
        assert!(matches!(parse_source(text), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn dimension_mismatch_in_operator() {
        let text = "[space]\ndim = 2\n[operator]\nA = [[1]]\n[strip]\nbeta1 = -1\nbeta2 = 1\n";
        assert!(parse_source(text).is_err());
    }
}
