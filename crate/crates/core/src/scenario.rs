//! Cell roles, test scenarios, scenario validation and execution.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::CellAddress;
use crate::calc::recalculate;
use crate::findings::{Finding, FindingLocation, Severity, RULE_SCENARIO};
use crate::formula::{reference_nodes, CellValue, RefNode};
use crate::grid::{CellContent, EditReceipt, GridError, NameTarget, Scalar, Workbook};

pub const DEFAULT_ABS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Input,
    Intermediate,
    Output,
}

impl Role {
    fn prefix(self) -> &'static str {
        match self {
            Role::Input => "sg_in_",
            Role::Intermediate => "sg_mid_",
            Role::Output => "sg_out_",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Input => "input",
            Role::Intermediate => "intermediate",
            Role::Output => "output",
        })
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "input" | "in" => Ok(Role::Input),
            "intermediate" | "mid" => Ok(Role::Intermediate),
            "output" | "out" => Ok(Role::Output),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ExpectationKind {
    #[serde(rename_all = "camelCase")]
    Exact {
        value: f64,
        #[serde(default = "default_tol")]
        abs_tol: f64,
    },
    Interval {
        lo: f64,
        hi: f64,
    },
    TextEquals {
        text: String,
    },
}

fn default_tol() -> f64 {
    DEFAULT_ABS_TOL
}

impl fmt::Display for ExpectationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpectationKind::Exact { value, abs_tol } => write!(f, "{value} ± {abs_tol}"),
            ExpectationKind::Interval { lo, hi } => write!(f, "[{lo}, {hi}]"),
            ExpectationKind::TextEquals { text } => write!(f, "{text:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub target: String,
    #[serde(flatten)]
    pub kind: ExpectationKind,
}

impl Expectation {
    pub fn exact(target: &str, value: f64) -> Self {
        Self { target: target.into(), kind: ExpectationKind::Exact { value, abs_tol: DEFAULT_ABS_TOL } }
    }

    pub fn interval(target: &str, lo: f64, hi: f64) -> Self {
        Self { target: target.into(), kind: ExpectationKind::Interval { lo, hi } }
    }

    pub fn text(target: &str, text: &str) -> Self {
        Self { target: target.into(), kind: ExpectationKind::TextEquals { text: text.into() } }
    }

    fn check_shape(&self) -> Result<(), String> {
        match &self.kind {
            ExpectationKind::Exact { value, abs_tol } => {
                if !value.is_finite() || !abs_tol.is_finite() || *abs_tol < 0.0 {
                    return Err(format!("{}: value and tolerance must be finite, tolerance ≥ 0", self.target));
                }
            }
            ExpectationKind::Interval { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(format!("{}: interval needs finite lo ≤ hi", self.target));
                }
            }
            ExpectationKind::TextEquals { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestScenario {
    pub name: String,
    pub inputs: BTreeMap<String, Scalar>,
    pub expectations: Vec<Expectation>,
    pub created_at: DateTime<Utc>,
    /// Lets inputs replace formula cells. Off by default so a scenario
    /// cannot silently mask the logic it tests.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_formula_override: bool,
}

impl TestScenario {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            inputs: BTreeMap::new(),
            expectations: Vec::new(),
            created_at: Utc::now(),
            allow_formula_override: false,
        }
    }

    pub fn input(mut self, name: &str, value: impl Into<Scalar>) -> Self {
        self.inputs.insert(name.into(), value.into());
        self
    }

    pub fn expect(mut self, e: Expectation) -> Self {
        self.expectations.push(e);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{address} already has role {existing}, cannot mark it {requested}")]
    RoleConflict { address: CellAddress, existing: Role, requested: Role },
    #[error("{0} holds a formula and cannot be an input")]
    InputIsFormula(CellAddress),
    #[error("{0} holds no formula and cannot be an output")]
    OutputNotFormula(CellAddress),
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("scenario {0:?} already exists")]
    DuplicateScenario(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("input {0} targets a formula cell; the scenario does not allow formula overrides")]
    FormulaOverride(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Marks cells with roles, binding a fresh hidden name per newly marked
/// cell. Marking a cell again with the same role returns its existing
/// name. All-or-nothing, one generation bump when anything changed.
pub fn mark_roles(wb: &mut Workbook, markings: &[(CellAddress, Role)]) -> Result<Vec<String>, ScenarioError> {
    let mut existing: BTreeMap<CellAddress, (String, Role)> = BTreeMap::new();
    for (name, role) in &wb.guardian.roles {
        if let Ok(NameTarget::Cell(a)) = wb.resolve_name(name) {
            existing.entry(a.clone()).or_insert((name.clone(), *role));
        }
    }

    let mut pending: BTreeMap<CellAddress, Role> = BTreeMap::new();
    for (addr, role) in markings {
        if wb.sheet(&addr.sheet).is_none() {
            return Err(GridError::UnknownSheet(addr.sheet.clone()).into());
        }
        if !addr.in_bounds() {
            return Err(GridError::OutOfRange(addr.to_string()).into());
        }
        let prior = existing.get(addr).map(|(_, r)| *r).or_else(|| pending.get(addr).copied());
        if let Some(prior) = prior {
            if prior != *role {
                return Err(ScenarioError::RoleConflict { address: addr.clone(), existing: prior, requested: *role });
            }
        }
        match (role, wb.content(addr)) {
            (Role::Input, CellContent::Formula(_)) => return Err(ScenarioError::InputIsFormula(addr.clone())),
            (Role::Output, c) if !c.is_formula() => return Err(ScenarioError::OutputNotFormula(addr.clone())),
            _ => {}
        }
        pending.insert(addr.clone(), *role);
    }

    let mut assigned: BTreeMap<CellAddress, String> = BTreeMap::new();
    let mut changed = false;
    let mut out = Vec::with_capacity(markings.len());
    for (addr, role) in markings {
        if let Some((name, _)) = existing.get(addr) {
            out.push(name.clone());
            continue;
        }
        if let Some(name) = assigned.get(addr) {
            out.push(name.clone());
            continue;
        }
        let name =
            (1..).map(|n| format!("{}{n}", role.prefix())).find(|n| wb.resolve_name(n).is_err()).expect("unbounded");
        wb.bind_name_quiet(&name, NameTarget::Cell(addr.clone()))?;
        wb.guardian.roles.insert(name.clone(), *role);
        assigned.insert(addr.clone(), name.clone());
        out.push(name);
        changed = true;
    }
    if changed {
        wb.update_guardian(|_| ());
    }
    Ok(out)
}

fn role_of(wb: &Workbook, name: &str) -> Result<Role, ScenarioError> {
    wb.resolve_name(name).map_err(|_| ScenarioError::UnknownName(name.into()))?;
    wb.guardian.roles.get(name).copied().ok_or_else(|| ScenarioError::Invalid(format!("{name} has no role")))
}

/// Checks the structural invariants of a scenario against the workbook's
/// role table.
pub fn check_scenario(wb: &Workbook, s: &TestScenario) -> Result<(), ScenarioError> {
    if s.name.trim().is_empty() {
        return Err(ScenarioError::Invalid("scenario name must not be empty".into()));
    }
    for name in s.inputs.keys() {
        if role_of(wb, name)? != Role::Input {
            return Err(ScenarioError::Invalid(format!("{name} is not an input cell")));
        }
    }
    for (name, v) in &s.inputs {
        if let Scalar::Number(n) = v {
            if !n.is_finite() {
                return Err(ScenarioError::Invalid(format!("{name}: input must be finite")));
            }
        }
    }
    let mut covered = BTreeSet::new();
    for e in &s.expectations {
        if role_of(wb, &e.target)? == Role::Input {
            return Err(ScenarioError::Invalid(format!(
                "{} is an input; expectations go on intermediate or output cells",
                e.target
            )));
        }
        e.check_shape().map_err(ScenarioError::Invalid)?;
        covered.insert(e.target.as_str());
    }
    for (name, role) in &wb.guardian.roles {
        let live = wb.resolve_name(name).is_ok_and(|t| !t.is_dangling());
        if *role == Role::Output && live && !covered.contains(name.as_str()) {
            return Err(ScenarioError::Invalid(format!("output {name} has no expectation")));
        }
    }
    Ok(())
}

pub fn add_scenario(wb: &mut Workbook, s: TestScenario) -> Result<EditReceipt, ScenarioError> {
    check_scenario(wb, &s)?;
    if wb.guardian.scenarios.iter().any(|x| x.name == s.name) {
        return Err(ScenarioError::DuplicateScenario(s.name));
    }
    Ok(wb.update_guardian(|g| g.scenarios.push(s)).1)
}

pub fn remove_scenario(wb: &mut Workbook, name: &str) -> Result<EditReceipt, ScenarioError> {
    let idx = wb
        .guardian
        .scenarios
        .iter()
        .position(|s| s.name == name)
        .ok_or_else(|| ScenarioError::UnknownScenario(name.into()))?;
    Ok(wb.update_guardian(|g| g.scenarios.remove(idx)).1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ScenarioIssue {
    /// (i) a literal cell feeding an expectation that the scenario does not set.
    MissingInput {
        address: CellAddress,
    },
    /// (ii) an output depending on the tested logic without an expectation.
    UncoveredOutput {
        name: String,
    },
    /// (iii) an input value the cell's formulas cannot reasonably consume.
    UnreasonableInput {
        name: String,
        reason: String,
    },
    DeletedCell {
        name: String,
    },
}

impl fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioIssue::MissingInput { address } => write!(f, "input missing for {address}"),
            ScenarioIssue::UncoveredOutput { name } => write!(f, "output {name} has no expectation"),
            ScenarioIssue::UnreasonableInput { name, reason } => write!(f, "input {name}: {reason}"),
            ScenarioIssue::DeletedCell { name } => write!(f, "{name}: marked cell was deleted"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationVerdict {
    pub issues: Vec<ScenarioIssue>,
}

impl ValidationVerdict {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Occupied cells read by the formula at `addr`, with ranges narrowed to
/// occupied cells.
fn precedents(wb: &Workbook, addr: &CellAddress) -> Vec<CellAddress> {
    let Some(f) = wb.content(addr).as_formula() else { return Vec::new() };
    let mut out = Vec::new();
    for node in reference_nodes(f.ast()) {
        match node {
            RefNode::Cell(r) => out.push(r.resolve(&addr.sheet)),
            RefNode::Range(r) => {
                let range = r.resolve(&addr.sheet);
                if let Some(sheet) = wb.sheet(&range.sheet) {
                    out.extend(
                        sheet
                            .cells()
                            .map(|(c, row, _)| CellAddress::new(range.sheet.clone(), c, row))
                            .filter(|a| range.contains(a)),
                    );
                }
            }
        }
    }
    out
}

/// Transitive precedents of `roots` (roots included), not expanding
/// through `stops`.
pub fn dependency_closure(
    wb: &Workbook,
    roots: impl IntoIterator<Item = CellAddress>,
    stops: &BTreeSet<CellAddress>,
) -> BTreeSet<CellAddress> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<CellAddress> = roots.into_iter().collect();
    while let Some(a) = queue.pop_front() {
        if !seen.insert(a.clone()) || stops.contains(&a) {
            continue;
        }
        queue.extend(precedents(wb, &a));
    }
    seen
}

fn resolve_cell(wb: &Workbook, name: &str) -> Result<Option<CellAddress>, ScenarioError> {
    match wb.resolve_name(name).map_err(|_| ScenarioError::UnknownName(name.into()))? {
        NameTarget::Cell(a) => Ok(Some(a.clone())),
        NameTarget::Range(r) => Err(ScenarioError::Invalid(format!("{name} names a range ({r}), not a cell"))),
        NameTarget::Dangling(_) => Ok(None),
    }
}

fn input_fits(current: &CellContent, value: &Scalar) -> Result<(), String> {
    let want = match current {
        CellContent::Value(Scalar::Number(_)) => "number",
        CellContent::Value(Scalar::Text(_)) => "text",
        CellContent::Value(Scalar::Bool(_)) => "boolean",
        CellContent::Empty | CellContent::Formula(_) => return Ok(()),
    };
    let ok = match value {
        Scalar::Number(n) => want == "number" && n.is_finite(),
        Scalar::Text(t) => want == "text" || (want == "number" && t.trim().parse::<f64>().is_ok_and(f64::is_finite)),
        Scalar::Bool(_) => want == "boolean",
    };
    if ok {
        Ok(())
    } else {
        Err(format!("cell holds a {want}, scenario supplies {value:?}"))
    }
}

/// Checks a scenario for completeness: every literal feeding an
/// expectation is set, every dependent output is checked, and inputs have
/// sensible types. Whether the expected values are right is what running
/// the scenario tests, so it is not judged here.
pub fn validate_scenario(wb: &Workbook, s: &TestScenario) -> Result<ValidationVerdict, ScenarioError> {
    let mut issues = Vec::new();
    let mut input_addrs = BTreeSet::new();
    for (name, value) in &s.inputs {
        match resolve_cell(wb, name)? {
            Some(a) => {
                if let Err(reason) = input_fits(wb.content(&a), value) {
                    issues.push(ScenarioIssue::UnreasonableInput { name: name.clone(), reason });
                }
                input_addrs.insert(a);
            }
            None => issues.push(ScenarioIssue::DeletedCell { name: name.clone() }),
        }
    }
    let mut targets = Vec::new();
    let mut covered = BTreeSet::new();
    for e in &s.expectations {
        covered.insert(e.target.clone());
        match resolve_cell(wb, &e.target)? {
            Some(a) => targets.push(a),
            None => issues.push(ScenarioIssue::DeletedCell { name: e.target.clone() }),
        }
    }

    let closure = dependency_closure(wb, targets, &input_addrs);
    for a in &closure {
        if matches!(wb.content(a), CellContent::Value(_)) && !input_addrs.contains(a) {
            issues.push(ScenarioIssue::MissingInput { address: a.clone() });
        }
    }

    let tested: BTreeSet<&CellAddress> =
        closure.iter().filter(|a| wb.content(a).is_formula()).chain(input_addrs.iter()).collect();
    for (name, role) in &wb.guardian.roles {
        if *role != Role::Output || covered.contains(name) {
            continue;
        }
        let Ok(NameTarget::Cell(a)) = wb.resolve_name(name) else { continue };
        let upstream = dependency_closure(wb, [a.clone()], &BTreeSet::new());
        if upstream.iter().any(|u| tested.contains(u)) {
            issues.push(ScenarioIssue::UncoveredOutput { name: name.clone() });
        }
    }
    Ok(ValidationVerdict { issues })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "camelCase")]
pub enum Outcome {
    Pass,
    Fail { actual: CellValue, reason: String },
    Error { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectationResult {
    pub expectation: Expectation,
    /// `None` when the target cell was deleted.
    pub address: Option<CellAddress>,
    pub outcome: Outcome,
    #[serde(skip)]
    anchor: CellAddress,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioResult {
    pub scenario: String,
    pub generation: u64,
    pub results: Vec<ExpectationResult>,
}

impl ScenarioResult {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.outcome == Outcome::Pass)
    }

    pub fn findings(&self) -> Vec<Finding> {
        self.results
            .iter()
            .filter(|r| r.outcome != Outcome::Pass)
            .map(|r| {
                let address = r.anchor.clone();
                let what = match &r.outcome {
                    Outcome::Fail { reason, .. } => reason.clone(),
                    Outcome::Error { reason } => reason.clone(),
                    Outcome::Pass => unreachable!(),
                };
                Finding::new(
                    RULE_SCENARIO,
                    Severity::FaultIndicator,
                    vec![FindingLocation::named(&r.expectation.target, address)],
                    format!("scenario {:?}: {what}", self.scenario),
                    vec![self.scenario.clone(), r.expectation.target.clone()],
                    self.generation,
                )
            })
            .collect()
    }
}

fn judge(kind: &ExpectationKind, actual: &CellValue) -> Outcome {
    if let CellValue::Error(e) = actual {
        return Outcome::Error { reason: format!("evaluates to {}", e.as_str()) };
    }
    let number = match actual {
        CellValue::Number(n) => Some(*n),
        CellValue::Blank => Some(0.0),
        _ => None,
    };
    let fail = |reason: String| Outcome::Fail { actual: actual.clone(), reason };
    match kind {
        ExpectationKind::Exact { value, abs_tol } => match number {
            Some(n) if (n - value).abs() <= *abs_tol => Outcome::Pass,
            Some(n) => fail(format!("expected {value} ± {abs_tol}, got {}", crate::formula::display_number(n))),
            None => fail(format!("expected a number near {value}, got {:?}", actual.display_text())),
        },
        ExpectationKind::Interval { lo, hi } => match number {
            Some(n) if *lo <= n && n <= *hi => Outcome::Pass,
            Some(n) => fail(format!("expected within [{lo}, {hi}], got {}", crate::formula::display_number(n))),
            None => fail(format!("expected a number within [{lo}, {hi}], got {:?}", actual.display_text())),
        },
        ExpectationKind::TextEquals { text } => {
            let got = actual.display_text();
            if got.to_lowercase() == text.to_lowercase() {
                Outcome::Pass
            } else {
                fail(format!("expected {text:?}, got {got:?}"))
            }
        }
    }
}

/// Where a name points, or pointed before its cell was deleted.
fn last_known(wb: &Workbook, name: &str) -> CellAddress {
    match wb.resolve_name(name) {
        Ok(NameTarget::Cell(a)) => Some(a.clone()),
        Ok(NameTarget::Dangling(last)) => last.parse().ok(),
        _ => None,
    }
    .or_else(|| wb.sheets().first().map(|sh| CellAddress::new(sh.name(), 1, 1)))
    .unwrap_or_else(|| CellAddress::new("Sheet1", 1, 1))
}

/// Recalculates a copy of the workbook with the scenario's inputs in place
/// and compares every expectation. The workbook itself is not touched.
pub fn run_scenario(wb: &Workbook, s: &TestScenario) -> Result<ScenarioResult, ScenarioError> {
    let mut overrides = BTreeMap::new();
    for (name, value) in &s.inputs {
        let Some(a) = resolve_cell(wb, name)? else {
            return Err(ScenarioError::Invalid(format!("{name}: marked cell was deleted")));
        };
        if wb.content(&a).is_formula() && !s.allow_formula_override {
            return Err(ScenarioError::FormulaOverride(name.clone()));
        }
        overrides.insert(a, value.to_value());
    }
    let state = recalculate(wb, &overrides);
    let mut results = Vec::with_capacity(s.expectations.len());
    for e in &s.expectations {
        let address = resolve_cell(wb, &e.target)?;
        let outcome = match &address {
            Some(a) => judge(&e.kind, &state.get(a)),
            None => Outcome::Error { reason: format!("{}: marked cell was deleted", e.target) },
        };
        let anchor = address.clone().unwrap_or_else(|| last_known(wb, &e.target));
        results.push(ExpectationResult { expectation: e.clone(), address, outcome, anchor });
    }
    Ok(ScenarioResult { scenario: s.name.clone(), generation: wb.generation(), results })
}

/// Runs every stored scenario. A scenario that cannot run at all becomes a
/// single finding for the scenario.
/// Findings of one scenario; a scenario that cannot run at all yields a
/// single finding carrying the reason.
pub fn scenario_findings(wb: &Workbook, s: &TestScenario) -> Vec<Finding> {
    match run_scenario(wb, s) {
        Ok(result) => result.findings(),
        Err(err) => {
            let anchor = s
                .expectations
                .iter()
                .find_map(|e| wb.resolve_name(&e.target).ok().and_then(|t| t.as_cell().cloned()))
                .or_else(|| wb.sheets().first().map(|sh| CellAddress::new(sh.name(), 1, 1)))
                .unwrap_or_else(|| CellAddress::new("", 1, 1));
            vec![Finding::new(
                RULE_SCENARIO,
                Severity::FaultIndicator,
                vec![FindingLocation::at(anchor)],
                format!("scenario {:?} cannot run: {err}", s.name),
                vec![s.name.clone()],
                wb.generation(),
            )]
        }
    }
}

pub fn run_scenarios(wb: &Workbook) -> Vec<Finding> {
    wb.guardian.scenarios.iter().flat_map(|s| scenario_findings(wb, s)).collect()
}
