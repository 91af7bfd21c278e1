//! Multi-condition data validation rules, checked over every row of their
//! scope on each inspection.

mod parse;
mod pattern;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::address::{column_letters, write_sheet_prefix, CellAddress};
use crate::calc::ComputedState;
use crate::edit::{Shifted, StructuralEdit};
use crate::findings::{Finding, FindingLocation, Severity, RULE_VALIDATION};
use crate::formula::{coerce_number, CellValue};
use crate::grid::Workbook;

pub use parse::{compile_rule, RuleSyntaxError};
pub use pattern::{matches, PatternElement};

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    NonEmpty,
    IsNumber,
    IsText,
    StartsWith(String),
    EndsWith(String),
    Contains(String),
    NumericBetween { lo: f64, hi: f64 },
    ShapePattern(Vec<PatternElement>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CondExpr {
    Leaf(Condition),
    And(Vec<CondExpr>),
    Or(Vec<CondExpr>),
    Not(Box<CondExpr>),
}

/// Columns of one sheet, optionally limited to a block of rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    pub sheet: String,
    pub start_col: u32,
    pub end_col: u32,
    pub rows: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnCheck {
    pub column: u32,
    pub expr: CondExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRule {
    pub id: String,
    pub scope: Scope,
    pub guard: Option<ColumnCheck>,
    pub requirement: ColumnCheck,
    /// Set when a structural edit removed part of what the rule needs.
    pub broken: Option<String>,
}

pub(crate) fn write_string(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        if c == '"' || c == '\\' {
            f.write_str("\\")?;
        }
        write!(f, "{c}")?;
    }
    f.write_str("\"")
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::NonEmpty => f.write_str("non_empty"),
            Condition::IsNumber => f.write_str("is_number"),
            Condition::IsText => f.write_str("is_text"),
            Condition::StartsWith(s) | Condition::EndsWith(s) | Condition::Contains(s) => {
                let name = match self {
                    Condition::StartsWith(_) => "starts_with",
                    Condition::EndsWith(_) => "ends_with",
                    _ => "contains",
                };
                write!(f, "{name}(")?;
                write_string(f, s)?;
                f.write_str(")")
            }
            Condition::NumericBetween { lo, hi } => write!(f, "between({lo}, {hi})"),
            Condition::ShapePattern(elements) => {
                f.write_str("matches(")?;
                for (i, e) in elements.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    e.fmt(f)?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for CondExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, parts: &[CondExpr], sep: &str, wrap: fn(&CondExpr) -> bool| {
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                if wrap(p) {
                    write!(f, "({p})")?;
                } else {
                    p.fmt(f)?;
                }
            }
            Ok(())
        };
        match self {
            CondExpr::Leaf(c) => c.fmt(f),
            CondExpr::And(parts) => join(f, parts, " AND ", |p| matches!(p, CondExpr::Or(_) | CondExpr::And(_))),
            CondExpr::Or(parts) => join(f, parts, " OR ", |p| matches!(p, CondExpr::Or(_))),
            CondExpr::Not(inner) => match **inner {
                CondExpr::And(_) | CondExpr::Or(_) => write!(f, "NOT ({inner})"),
                _ => write!(f, "NOT {inner}"),
            },
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_sheet_prefix(f, &self.sheet)?;
        let (a, b) = (column_letters(self.start_col), column_letters(self.end_col));
        match self.rows {
            Some((r1, r2)) => write!(f, "{a}{r1}:{b}{r2}"),
            None => write!(f, "{a}:{b}"),
        }
    }
}

impl fmt::Display for ValidationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RULE {} ON {}", self.id, self.scope)?;
        if let Some(g) = &self.guard {
            write!(f, " WHEN {} {}", column_letters(g.column), g.expr)?;
        }
        write!(f, " REQUIRE {} {}", column_letters(self.requirement.column), self.requirement.expr)
    }
}

impl std::str::FromStr for ValidationRule {
    type Err = RuleSyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        compile_rule(s)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredRule {
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    broken: Option<String>,
}

impl Serialize for ValidationRule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StoredRule { source: self.to_string(), broken: self.broken.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ValidationRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let stored = StoredRule::deserialize(d)?;
        let mut rule = compile_rule(&stored.source).map_err(serde::de::Error::custom)?;
        rule.broken = stored.broken;
        Ok(rule)
    }
}

impl Condition {
    fn holds(&self, value: &CellValue) -> bool {
        let text = value.display_text();
        match self {
            Condition::NonEmpty => !text.is_empty(),
            Condition::IsNumber => matches!(value, CellValue::Number(_)),
            Condition::IsText => matches!(value, CellValue::Text(_)),
            Condition::StartsWith(s) => text.starts_with(s.as_str()),
            Condition::EndsWith(s) => text.ends_with(s.as_str()),
            Condition::Contains(s) => text.contains(s.as_str()),
            Condition::NumericBetween { lo, hi } => {
                let n = match value {
                    CellValue::Blank => None,
                    v => coerce_number(v),
                };
                n.is_some_and(|n| *lo <= n && n <= *hi)
            }
            Condition::ShapePattern(elements) => matches(elements, &text),
        }
    }
}

impl CondExpr {
    /// `Ok` when the expression holds, otherwise the path to the first
    /// failing node, outermost first.
    pub fn check(&self, value: &CellValue) -> Result<(), Vec<String>> {
        match self {
            CondExpr::Leaf(c) => {
                if c.holds(value) {
                    Ok(())
                } else {
                    Err(vec![c.to_string()])
                }
            }
            CondExpr::And(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if let Err(mut path) = p.check(value) {
                        path.insert(0, format!("AND[{}]", i + 1));
                        return Err(path);
                    }
                }
                Ok(())
            }
            CondExpr::Or(parts) => {
                if parts.iter().any(|p| p.check(value).is_ok()) {
                    Ok(())
                } else {
                    Err(vec![self.to_string()])
                }
            }
            CondExpr::Not(inner) => match inner.check(value) {
                Ok(()) => Err(vec![self.to_string()]),
                Err(_) => Ok(()),
            },
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            CondExpr::Leaf(_) => 1,
            CondExpr::And(p) | CondExpr::Or(p) => p.iter().map(CondExpr::leaves).sum(),
            CondExpr::Not(inner) => inner.leaves(),
        }
    }
}

impl ValidationRule {
    /// Rows checked on `wb`: the scope's rows, cut off after the last
    /// occupied row of the sheet.
    pub fn rows(&self, wb: &Workbook) -> std::ops::RangeInclusive<u32> {
        let last = wb.sheet(&self.scope.sheet).map_or(0, |s| s.used_extent().0);
        let (lo, hi) = self.scope.rows.unwrap_or((1, last));
        lo..=hi.min(last)
    }

    pub(crate) fn apply_structural_edit(&mut self, edit: &StructuralEdit) {
        if self.broken.is_some() || self.scope.sheet != edit.sheet {
            return;
        }
        if edit.affects_rows() {
            if let Some((a, b)) = self.scope.rows {
                match edit.shift_span(a, b) {
                    Some(rows) => self.scope.rows = Some(rows),
                    None => self.broken = Some(format!("rows of scope {} were deleted", self.scope)),
                }
            }
            return;
        }
        let before = self.to_string();
        let mut lost = Vec::new();
        for check in self.guard.iter_mut().chain([&mut self.requirement]) {
            match edit.shift_index(check.column) {
                Shifted::To(c) => check.column = c,
                _ => lost.push(column_letters(check.column)),
            }
        }
        match edit.shift_span(self.scope.start_col, self.scope.end_col) {
            Some((a, b)) if lost.is_empty() => {
                self.scope.start_col = a;
                self.scope.end_col = b;
            }
            _ => {
                // Keep the last working source so the rule can be repaired.
                let mut restored = compile_rule(&before).expect("printed rule reparses");
                restored.broken = Some(format!("column {} of the rule was deleted", lost.join(", ")));
                *self = restored;
            }
        }
    }
}

/// Checks every in-scope row. Rows whose guard fails produce nothing; any
/// other row whose target cell fails the requirement produces one finding.
pub fn evaluate_rules(wb: &Workbook, state: &ComputedState, rules: &[ValidationRule]) -> Vec<Finding> {
    let names = wb.names_by_address();
    let loc = |a: CellAddress| FindingLocation { name: names.get(&a).cloned(), address: a };
    let mut out = Vec::new();
    for rule in rules {
        if let Some(reason) = &rule.broken {
            let anchor =
                CellAddress::new(rule.scope.sheet.clone(), rule.scope.start_col, rule.scope.rows.map_or(1, |r| r.0));
            out.push(Finding::new(
                RULE_VALIDATION,
                Severity::FaultIndicator,
                vec![loc(anchor)],
                format!("rule {} no longer applies: {reason}", rule.id),
                vec![rule.id.clone(), "broken".into()],
                wb.generation(),
            ));
            continue;
        }
        if wb.sheet(&rule.scope.sheet).is_none() {
            continue;
        }
        for row in rule.rows(wb) {
            let at = |col: u32| CellAddress::new(rule.scope.sheet.clone(), col, row);
            if let Some(guard) = &rule.guard {
                if guard.expr.check(&state.get(&at(guard.column))).is_err() {
                    continue;
                }
            }
            let target = at(rule.requirement.column);
            let value = state.get(&target);
            if let Err(path) = rule.requirement.expr.check(&value) {
                let guard_note = rule
                    .guard
                    .as_ref()
                    .map(|g| format!(" (since {} {})", at(g.column).local(), g.expr))
                    .unwrap_or_default();
                out.push(Finding::new(
                    RULE_VALIDATION,
                    Severity::FaultIndicator,
                    vec![loc(target.clone())],
                    format!(
                        "rule {}: {} = {:?} fails {}{guard_note}",
                        rule.id,
                        target.local(),
                        value.display_text(),
                        path.join(" > ")
                    ),
                    vec![rule.id.clone()],
                    wb.generation(),
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
