//! Static inspection rules over a workbook snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::{CellAddress, RangeAddress};
use crate::findings::*;
use crate::formula::{print_relative, reference_counts, reference_nodes, Expr, Formula, RefNode};
use crate::grid::Workbook;

pub const STATIC_RULES: [&str; 6] =
    [RULE_REPEATED_REF, RULE_EMPTY_REF, RULE_CONSTANT, RULE_READING_DIRECTION, RULE_HIDDEN_CONTENT, RULE_NEIGHBOR];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown rule id {0:?}")]
pub struct UnknownRule(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StaticRuleConfig {
    #[serde(default = "all_rules")]
    pub enabled: BTreeSet<String>,
    /// Numeric literals that never count as embedded constants.
    #[serde(default = "default_allowlist")]
    pub constant_allowlist: Vec<f64>,
    /// Shortest run of adjacent formulas that takes part in the neighbour vote.
    #[serde(default = "default_min_run")]
    pub neighbor_min_run: usize,
}

fn all_rules() -> BTreeSet<String> {
    STATIC_RULES.iter().map(|s| s.to_string()).collect()
}

fn default_allowlist() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn default_min_run() -> usize {
    3
}

impl Default for StaticRuleConfig {
    fn default() -> Self {
        Self { enabled: all_rules(), constant_allowlist: default_allowlist(), neighbor_min_run: default_min_run() }
    }
}

impl StaticRuleConfig {
    pub fn validate(&self) -> Result<(), UnknownRule> {
        match self.enabled.iter().find(|id| !STATIC_RULES.contains(&id.as_str())) {
            Some(id) => Err(UnknownRule(id.clone())),
            None => Ok(()),
        }
    }

    pub fn is_enabled(&self, rule: &str) -> bool {
        self.enabled.contains(rule)
    }

    pub fn set_enabled(&mut self, rule: &str, on: bool) -> Result<(), UnknownRule> {
        if !STATIC_RULES.contains(&rule) {
            return Err(UnknownRule(rule.to_string()));
        }
        if on {
            self.enabled.insert(rule.to_string());
        } else {
            self.enabled.remove(rule);
        }
        Ok(())
    }
}

type Detector = fn(&Ctx) -> Vec<Finding>;

/// Runs every enabled static rule.
pub fn inspect(wb: &Workbook, config: &StaticRuleConfig) -> Vec<Finding> {
    let ctx = Ctx { wb, names: wb.names_by_address(), config };
    let mut out = Vec::new();
    let rules: [(&str, Detector); 6] = [
        (RULE_REPEATED_REF, detect_repeated_refs),
        (RULE_EMPTY_REF, detect_empty_refs),
        (RULE_CONSTANT, detect_constants),
        (RULE_READING_DIRECTION, detect_reading_direction),
        (RULE_HIDDEN_CONTENT, detect_hidden_content),
        (RULE_NEIGHBOR, detect_neighbor_inconsistency),
    ];
    for (id, rule) in rules {
        if config.is_enabled(id) {
            out.extend(rule(&ctx));
        }
    }
    sort_findings(wb, &mut out);
    out
}

/// Sheet order, row, column, rule id, key.
pub fn sort_findings(wb: &Workbook, findings: &mut [Finding]) {
    findings.sort_by(|a, b| {
        let ka = a.primary().map(|p| wb.sort_key(p));
        let kb = b.primary().map(|p| wb.sort_key(p));
        ka.cmp(&kb).then_with(|| a.rule_id.cmp(&b.rule_id)).then_with(|| a.key.cmp(&b.key))
    });
}

struct Ctx<'a> {
    wb: &'a Workbook,
    names: HashMap<CellAddress, String>,
    config: &'a StaticRuleConfig,
}

impl Ctx<'_> {
    fn loc(&self, addr: &CellAddress) -> FindingLocation {
        FindingLocation { name: self.names.get(addr).cloned(), address: addr.clone() }
    }

    fn finding(
        &self,
        rule: &str,
        severity: Severity,
        at: &CellAddress,
        message: String,
        payload: Vec<String>,
    ) -> Finding {
        Finding::new(rule, severity, vec![self.loc(at)], message, payload, self.wb.generation())
    }

    fn formulas(&self) -> impl Iterator<Item = (CellAddress, &Formula)> {
        self.wb.formulas()
    }

    fn is_empty(&self, addr: &CellAddress) -> bool {
        self.wb.content(addr).is_empty()
    }

    fn range_is_empty(&self, range: &RangeAddress) -> bool {
        let Some(sheet) = self.wb.sheet(&range.sheet) else { return false };
        !sheet.cells().any(|(c, r, cell)| {
            !cell.content.is_empty() && range.contains(&CellAddress::new(range.sheet.clone(), c, r))
        })
    }
}

fn detect_repeated_refs(ctx: &Ctx) -> Vec<Finding> {
    let mut out = Vec::new();
    for (host, f) in ctx.formulas() {
        let dups: Vec<String> = reference_counts(f.ast(), &host.sheet)
            .into_iter()
            .filter(|(_, n)| *n >= 2)
            .map(|(a, _)| a.to_string())
            .collect();
        if !dups.is_empty() {
            let msg = format!("references {} more than once", dups.join(", "));
            out.push(ctx.finding(RULE_REPEATED_REF, Severity::FaultIndicator, &host, msg, dups));
        }
    }
    out
}

fn detect_empty_refs(ctx: &Ctx) -> Vec<Finding> {
    let mut out = Vec::new();
    for (host, f) in ctx.formulas() {
        let mut empties = BTreeSet::new();
        for node in reference_nodes(f.ast()) {
            match node {
                RefNode::Cell(r) => {
                    let a = r.resolve(&host.sheet);
                    if ctx.wb.sheet(&a.sheet).is_some() && ctx.is_empty(&a) {
                        empties.insert(a.to_string());
                    }
                }
                RefNode::Range(r) => {
                    let range = r.resolve(&host.sheet);
                    if ctx.range_is_empty(&range) {
                        empties.insert(range.to_string());
                    }
                }
            }
        }
        if !empties.is_empty() {
            let payload: Vec<String> = empties.into_iter().collect();
            let msg = format!("references empty {}", payload.join(", "));
            out.push(ctx.finding(RULE_EMPTY_REF, Severity::FaultIndicator, &host, msg, payload));
        }
    }
    out
}

fn collect_constants(expr: &Expr, allow: &[f64], exempt: bool, out: &mut Vec<f64>) {
    match expr {
        Expr::Number(n) => {
            if !exempt && !allow.contains(n) {
                out.push(*n);
            }
        }
        Expr::Unary { operand, .. } => collect_constants(operand, allow, false, out),
        Expr::Binary { lhs, rhs, .. } => {
            collect_constants(lhs, allow, false, out);
            collect_constants(rhs, allow, false, out);
        }
        Expr::Call { func, args } => {
            for (i, arg) in args.iter().enumerate() {
                collect_constants(arg, allow, func.index_positions().contains(&i), out);
            }
        }
        _ => {}
    }
}

fn detect_constants(ctx: &Ctx) -> Vec<Finding> {
    let mut out = Vec::new();
    for (host, f) in ctx.formulas() {
        let mut found = Vec::new();
        collect_constants(f.ast(), &ctx.config.constant_allowlist, false, &mut found);
        if !found.is_empty() {
            let payload: Vec<String> = found.iter().map(|n| crate::formula::display_number(*n)).collect();
            let msg = format!("formula embeds constant {}", payload.join(", "));
            out.push(ctx.finding(RULE_CONSTANT, Severity::Imperfection, &host, msg, payload));
        }
    }
    out
}

fn detect_reading_direction(ctx: &Ctx) -> Vec<Finding> {
    let mut out = Vec::new();
    for (host, f) in ctx.formulas() {
        let mut bad = Vec::new();
        for node in reference_nodes(f.ast()) {
            let range = match node {
                RefNode::Cell(r) => {
                    let a = r.resolve(&host.sheet);
                    RangeAddress::new(a.sheet, a.col, a.row, a.col, a.row)
                }
                RefNode::Range(r) => r.resolve(&host.sheet),
            };
            if range.sheet != host.sheet {
                continue;
            }
            let below = range.end_row > host.row;
            let right = range.start_row <= host.row && host.row <= range.end_row && range.end_col > host.col;
            if below || right {
                bad.push(if range.width() == 1 && range.height() == 1 {
                    CellAddress::new(range.sheet.clone(), range.start_col, range.start_row).to_string()
                } else {
                    range.to_string()
                });
            }
        }
        if !bad.is_empty() {
            let msg = format!("reads against the sheet's flow from {}", bad.join(", "));
            out.push(ctx.finding(RULE_READING_DIRECTION, Severity::Imperfection, &host, msg, bad));
        }
    }
    out
}

fn detect_hidden_content(ctx: &Ctx) -> Vec<Finding> {
    let formulas: Vec<(CellAddress, &Formula)> = ctx.formulas().collect();
    let referenced = |target: &CellAddress| {
        formulas.iter().any(|(host, f)| {
            reference_nodes(f.ast()).into_iter().any(|node| match node {
                RefNode::Cell(r) => &r.resolve(&host.sheet) == target,
                RefNode::Range(r) => r.resolve(&host.sheet).contains(target),
            })
        })
    };
    let mut out = Vec::new();
    for sheet in ctx.wb.sheets() {
        for (col, row, cell) in sheet.cells() {
            if cell.content.is_empty() || !cell.format.hides_content() {
                continue;
            }
            let addr = CellAddress::new(sheet.name(), col, row);
            let is_ref = referenced(&addr);
            let msg = if is_ref {
                "content is invisible (font colour equals fill) and feeds formulas".to_string()
            } else {
                "content is invisible (font colour equals fill)".to_string()
            };
            out.push(ctx.finding(
                RULE_HIDDEN_CONTENT,
                Severity::FaultIndicator,
                &addr,
                msg,
                vec![format!("referenced={is_ref}")],
            ));
        }
    }
    out
}

fn detect_neighbor_inconsistency(ctx: &Ctx) -> Vec<Finding> {
    let min_run = ctx.config.neighbor_min_run.max(2);
    let mut out = Vec::new();
    for sheet in ctx.wb.sheets() {
        let formulas: BTreeMap<(u32, u32), &Formula> =
            sheet.cells().filter_map(|(c, r, cell)| cell.content.as_formula().map(|f| ((r, c), f))).collect();
        for by_row in [true, false] {
            for run in runs(&formulas, by_row) {
                if run.len() < min_run {
                    continue;
                }
                // A cell combining two or more of its run mates (a row total
                // at the end of the row it sums) is not a peer of them.
                let members: BTreeSet<CellAddress> =
                    run.iter().map(|&(r, c)| CellAddress::new(sheet.name(), c, r)).collect();
                let peers: Vec<(u32, u32)> = run
                    .iter()
                    .copied()
                    .filter(|&(r, c)| {
                        let me = CellAddress::new(sheet.name(), c, r);
                        let mates = reference_counts(formulas[&(r, c)].ast(), sheet.name())
                            .into_keys()
                            .filter(|a| *a != me && members.contains(a))
                            .count();
                        mates < 2
                    })
                    .collect();
                if peers.len() < min_run {
                    continue;
                }
                let forms: Vec<(CellAddress, String)> = peers
                    .iter()
                    .map(|&(r, c)| {
                        let a = CellAddress::new(sheet.name(), c, r);
                        let form = print_relative(formulas[&(r, c)].ast(), &a);
                        (a, form)
                    })
                    .collect();
                let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
                for (_, form) in &forms {
                    *tally.entry(form.as_str()).or_default() += 1;
                }
                let Some((majority, _)) = tally.iter().find(|(_, &n)| 2 * n > forms.len()) else { continue };
                let direction = if by_row { "row" } else { "column" };
                for (addr, form) in &forms {
                    if form != majority {
                        let msg = format!("differs from the other formulas in its {direction} ({majority})");
                        let payload = vec![direction.to_string(), majority.to_string(), form.clone()];
                        out.push(ctx.finding(RULE_NEIGHBOR, Severity::FaultIndicator, addr, msg, payload));
                    }
                }
            }
        }
    }
    out
}

/// Maximal runs of adjacent keys `(row, col)` along rows or columns.
fn runs<V>(cells: &BTreeMap<(u32, u32), V>, by_row: bool) -> Vec<Vec<(u32, u32)>> {
    let mut keys: Vec<(u32, u32)> = cells.keys().copied().collect();
    if !by_row {
        keys.sort_by_key(|&(r, c)| (c, r));
    }
    let mut out: Vec<Vec<(u32, u32)>> = Vec::new();
    for (r, c) in keys {
        let extends = out.last().and_then(|run| run.last()).is_some_and(|&(pr, pc)| {
            if by_row {
                pr == r && pc + 1 == c
            } else {
                pc == c && pr + 1 == r
            }
        });
        if extends {
            out.last_mut().expect("run").push((r, c));
        } else {
            out.push(vec![(r, c)]);
        }
    }
    out
}
