//! Parsing of `NAME=VALUE` arguments for scenario authoring.

use sguard_core::grid::Scalar;
use sguard_core::scenario::{Expectation, ExpectationKind, DEFAULT_ABS_TOL};

fn split(arg: &str) -> Result<(&str, &str), String> {
    let (name, value) = arg.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got {arg:?}"))?;
    let name = name.trim();
    if name.is_empty() {
        return Err(format!("missing name in {arg:?}"));
    }
    Ok((name, value.trim()))
}

fn unquote(text: &str) -> &str {
    text.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(text)
}

fn number(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok().filter(|n| n.is_finite())
}

/// `NAME=12.5`, `NAME=TRUE` or `NAME=some text` (quotes optional).
pub fn parse_input(arg: &str) -> Result<(String, Scalar), String> {
    let (name, value) = split(arg)?;
    let scalar = if value.starts_with('"') {
        Scalar::Text(unquote(value).to_string())
    } else if let Some(n) = number(value) {
        Scalar::Number(n)
    } else if value.eq_ignore_ascii_case("true") {
        Scalar::Bool(true)
    } else if value.eq_ignore_ascii_case("false") {
        Scalar::Bool(false)
    } else {
        Scalar::Text(value.to_string())
    };
    Ok((name.to_string(), scalar))
}

/// `NAME=VAL`, `NAME=VAL±TOL` (or `+-`), `NAME=[LO..HI]`; anything else
/// that is not a number is an expected text.
pub fn parse_expect(arg: &str) -> Result<Expectation, String> {
    let (name, value) = split(arg)?;
    let kind = if let Some(inner) = value.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or_else(|| format!("unclosed interval in {arg:?}"))?;
        let (lo, hi) = inner.split_once("..").ok_or_else(|| format!("interval needs LO..HI in {arg:?}"))?;
        let lo = number(lo).ok_or_else(|| format!("bad lower bound in {arg:?}"))?;
        let hi = number(hi).ok_or_else(|| format!("bad upper bound in {arg:?}"))?;
        if lo > hi {
            return Err(format!("empty interval in {arg:?}"));
        }
        ExpectationKind::Interval { lo, hi }
    } else if let Some((v, tol)) = value.split_once('±').or_else(|| value.split_once("+-")) {
        let value = number(v).ok_or_else(|| format!("bad value in {arg:?}"))?;
        let abs_tol = number(tol).filter(|t| *t >= 0.0).ok_or_else(|| format!("bad tolerance in {arg:?}"))?;
        ExpectationKind::Exact { value, abs_tol }
    } else if let (false, Some(value)) = (value.starts_with('"'), number(value)) {
        ExpectationKind::Exact { value, abs_tol: DEFAULT_ABS_TOL }
    } else {
        ExpectationKind::TextEquals { text: unquote(value).to_string() }
    };
    Ok(Expectation { target: name.to_string(), kind })
}
