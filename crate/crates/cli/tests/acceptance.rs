//! Acceptance criteria P1 to P9. Each prints one PASS/FAIL line; the test
//! fails if any criterion does.
//!
//! Run with `cargo test -p sguard-cli --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use sguard_core::address::{column_letters, CellAddress};
use sguard_core::calc::recalculate;
use sguard_core::edit::{EditKind, StructuralEdit};
use sguard_core::engine::{run_all, run_cycle, Mailbox, Scheduler};
use sguard_core::findings::*;
use sguard_core::formula::{evaluate, references, CellValue, ErrorKind};
use sguard_core::grid::{CellContent, CellFormat, Workbook};
use sguard_core::inspect::StaticRuleConfig;
use sguard_core::io::{load_workbook, read_workbook, save_workbook};
use sguard_core::scenario::{
    mark_roles, run_scenario, validate_scenario, Expectation, Outcome, Role, ScenarioIssue, TestScenario,
};

/// Pinned tolerances.
const P1_MAX_RUNTIME: Duration = Duration::from_secs(1);
const P3_ORACLE_TOL: f64 = 1e-9;
const P5_REL_TOL: f64 = 1e-12;

type Verdict = Result<String, String>;
type Criterion = fn() -> Verdict;

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn fixture(name: &str) -> Workbook {
    read_workbook(&fixture_path(name)).unwrap()
}

fn fixture_json(name: &str) -> Value {
    serde_json::from_slice(&std::fs::read(fixture_path(name)).unwrap()).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn addr(s: &str) -> CellAddress {
    s.parse().unwrap()
}

// P1: the repeated B4 in the playground sum.

fn p1() -> Verdict {
    let wb = fixture("playground.sgwb.json");
    let started = Instant::now();
    let findings = run_all(&wb, &StaticRuleConfig::default());
    let elapsed = started.elapsed();

    // Oracle: count addends of the formula text.
    let source = wb.content(&addr("Calc!B9")).as_formula().unwrap().source().to_string();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for term in source.trim_start_matches('=').split('+') {
        *counts.entry(term).or_default() += 1;
    }
    let repeated: Vec<&str> = counts.iter().filter(|(_, &n)| n > 1).map(|(t, _)| *t).collect();
    ensure(repeated == ["B4"], || format!("oracle found {repeated:?}"))?;

    let r1: Vec<&Finding> = findings.iter().filter(|f| f.rule_id == RULE_REPEATED_REF).collect();
    ensure(r1.len() == 1, || format!("{} SG-R1 findings", r1.len()))?;
    ensure(r1[0].payload == ["Calc!B4"], || format!("payload {:?}", r1[0].payload))?;
    ensure(r1[0].message.contains("B4"), || r1[0].message.clone())?;
    ensure(elapsed < P1_MAX_RUNTIME, || format!("took {elapsed:?}"))?;
    Ok(format!("one SG-R1 naming Calc!B4 in {elapsed:?}"))
}

// P2: the three seeded defects through one `check` run.

fn p2() -> Verdict {
    let path = fixture_path("tariff-comparison.sgwb.json");
    let out = Command::new(env!("CARGO_BIN_EXE_sguard"))
        .args(["check", "--format", "json"])
        .arg(&path)
        .env_remove("SG_CONFIG")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(1), || format!("exit {:?}", out.status.code()))?;
    let report: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let at = |rule: &str| -> BTreeSet<String> {
        report["findings"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|f| f["ruleId"] == rule)
            .map(|f| f["locations"][0]["address"].as_str().unwrap().to_string())
            .collect()
    };

    // Hidden cells straight from the file: font colour equal to fill.
    let json = fixture_json("tariff-comparison.sgwb.json");
    let mut hidden = BTreeSet::new();
    for sheet in json["sheets"].as_array().unwrap() {
        for (cell, fmt) in sheet["formats"].as_object().unwrap() {
            if fmt["font"].as_str().map(str::to_ascii_uppercase) == fmt["fill"].as_str().map(str::to_ascii_uppercase) {
                hidden.insert(format!("{}!{cell}", sheet["name"].as_str().unwrap()));
            }
        }
    }
    ensure(hidden.len() == 4, || format!("fixture hides {hidden:?}"))?;

    let r1 = at(RULE_REPEATED_REF);
    let want: BTreeSet<String> = ["Calculation!K33", "Calculation!K34"].map(String::from).into();
    ensure(r1 == want, || format!("SG-R1 at {r1:?}"))?;
    let wrong = "Calculation!J34".to_string();
    ensure(at(RULE_NEIGHBOR).contains(&wrong) || at(RULE_EMPTY_REF).contains(&wrong), || "nothing at J34".into())?;
    ensure(at(RULE_HIDDEN_CONTENT) == hidden, || format!("SG-R5 at {:?}", at(RULE_HIDDEN_CONTENT)))?;
    let failing = at(RULE_SCENARIO).len();
    ensure(failing >= 1, || "no failing scenario".into())?;
    Ok(format!(
        "exit 1; SG-R1 at K33,K34; J34 flagged; {} hidden cells; scenario failures at {failing} cells",
        hidden.len()
    ))
}

// P3: the stale lookup index trap, and row insertion that changes nothing.

/// Monthly cost per tariff computed from the raw table in the file.
fn tariff_oracle(json: &Value, tariff: &str, usage: [f64; 4]) -> f64 {
    let sheet = json["sheets"].as_array().unwrap().iter().find(|s| s["name"] == "Tariffs").unwrap();
    let cells = sheet["cells"].as_object().unwrap();
    let row = (2..)
        .take_while(|r| cells.contains_key(&format!("A{r}")))
        .find(|r| cells[&format!("A{r}")]["v"] == tariff)
        .unwrap();
    ["B", "C", "D", "E"]
        .iter()
        .zip(usage)
        .map(|(col, u)| u * cells[&format!("{col}{row}")]["v"].as_f64().unwrap())
        .sum()
}

fn verdicts(wb: &Workbook) -> Vec<Vec<bool>> {
    wb.guardian()
        .scenarios
        .iter()
        .map(|s| run_scenario(wb, s).unwrap().results.iter().map(|r| matches!(r.outcome, Outcome::Pass)).collect())
        .collect()
}

fn p3() -> Verdict {
    let json = fixture_json("tariff-comparison-clean.sgwb.json");
    let wb = fixture("tariff-comparison-clean.sgwb.json");

    // The stored expectations agree with the oracle.
    for s in &wb.guardian().scenarios {
        let num = |n: &str, default: f64| s.inputs.get(n).map_or(default, |v| v.to_value().as_number().unwrap());
        let text = |n: &str| s.inputs[n].to_value().display_text();
        let usage = [num("sg_in_1", 1.0), num("sg_in_2", 120.0), num("sg_in_3", 80.0), num("sg_in_4", 50.0)];
        let (a, b) = (text("sg_in_5"), text("sg_in_6"));
        let (ca, cb) = (tariff_oracle(&json, &a, usage), tariff_oracle(&json, &b, usage));
        let cheapest = if ca <= cb { &a } else { &b };
        for e in &s.expectations {
            let ok = match (&e.target[..], &e.kind) {
                ("sg_out_1", sguard_core::scenario::ExpectationKind::Exact { value, .. }) => {
                    (value - ca).abs() < P3_ORACLE_TOL
                }
                ("sg_out_2", sguard_core::scenario::ExpectationKind::Exact { value, .. }) => {
                    (value - cb).abs() < P3_ORACLE_TOL
                }
                ("sg_out_3", sguard_core::scenario::ExpectationKind::TextEquals { text }) => text == cheapest,
                _ => false,
            };
            ensure(ok, || format!("scenario {:?}: {} disagrees with oracle", s.name, e.target))?;
        }
    }
    let before = verdicts(&wb);
    ensure(before.iter().flatten().all(|&p| p), || "clean fixture does not pass".into())?;

    let names_before: BTreeMap<String, CellContent> = wb
        .guardian()
        .roles
        .keys()
        .map(|n| (n.clone(), wb.content(wb.resolve_name(n).unwrap().as_cell().unwrap()).clone()))
        .collect();

    let mut trap = wb.clone();
    trap.apply_structural_edit(&StructuralEdit::new(EditKind::InsertCols, "Tariffs", 3, 1))
        .map_err(|e| e.to_string())?;
    let after = verdicts(&trap);
    let flipped = before.iter().flatten().zip(after.iter().flatten()).filter(|(b, a)| **b && !**a).count();
    ensure(flipped >= 1, || "column insert flipped nothing".into())?;
    for (name, content) in &names_before {
        let target = trap.resolve_name(name).map_err(|e| e.to_string())?;
        let cell = target.as_cell().ok_or_else(|| format!("{name} no longer resolves"))?;
        ensure(trap.content(cell) == content, || format!("{name} moved to different content"))?;
    }

    for at in [1, 26, 29, 31, 32, 35] {
        let mut moved = wb.clone();
        moved
            .apply_structural_edit(&StructuralEdit::new(EditKind::InsertRows, "Calculation", at, 2))
            .map_err(|e| e.to_string())?;
        ensure(verdicts(&moved) == before, || format!("inserting rows at {at} changed verdicts"))?;
    }
    Ok(format!("InsertCols flips {flipped} expectations, names intact; InsertRows at 6 positions changes none"))
}

// P4: scenario completeness against a brute-force closure.

/// A random DAG workbook on sheet S: cell `i` (row-major over A1:C5) may
/// only read cells before it.
fn random_dag(rng: &mut StdRng, max_cells: usize) -> Workbook {
    let mut wb = Workbook::with_sheets(["S"]).unwrap();
    let slots: Vec<(u32, u32)> = (1..=5).flat_map(|r| (1..=3).map(move |c| (c, r))).collect();
    let n = rng.gen_range(2..=max_cells.min(slots.len()));
    let used: Vec<(u32, u32)> = {
        let mut picked: Vec<usize> = (0..slots.len()).collect();
        for i in (1..picked.len()).rev() {
            picked.swap(i, rng.gen_range(0..=i));
        }
        let mut keep: Vec<usize> = picked.into_iter().take(n).collect();
        keep.sort_unstable();
        keep.into_iter().map(|i| slots[i]).collect()
    };
    let name = |(c, r): (u32, u32)| format!("{}{r}", column_letters(c));
    for (i, &slot) in used.iter().enumerate() {
        let a = CellAddress::new("S", slot.0, slot.1);
        if i == 0 || rng.gen_bool(0.4) {
            wb.set_cell(&a, CellContent::number(f64::from(rng.gen_range(-9i32..10)))).unwrap();
            continue;
        }
        let mut terms = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let j = rng.gen_range(0..i);
            // A column range ending at an earlier cell lies wholly before `a`.
            let (c, r) = used[j];
            if rng.gen_bool(0.25) && r > 1 {
                terms.push(format!("SUM({}:{})", name((c, 1)), name((c, r))));
            } else {
                terms.push(name(used[j]));
            }
        }
        if rng.gen_bool(0.2) {
            // A direct reference to a cell that may be empty.
            let (c, r) = slots[rng.gen_range(0..slots.len())];
            if (r, c) < (slot.1, slot.0) {
                terms.push(name((c, r)));
            }
        }
        wb.set_cell(&a, CellContent::formula(&format!("={}", terms.join("+"))).unwrap()).unwrap();
    }
    wb
}

fn brute_closure(wb: &Workbook, roots: &[CellAddress]) -> BTreeSet<CellAddress> {
    let mut reach: BTreeSet<CellAddress> = roots.iter().cloned().collect();
    loop {
        let mut next = reach.clone();
        for a in &reach {
            if let Some(f) = wb.content(a).as_formula() {
                next.extend(references(f.ast(), &a.sheet));
            }
        }
        if next == reach {
            return reach;
        }
        reach = next;
    }
}

fn p4() -> Verdict {
    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    let mut mismatches = 0;
    let mut checked = 0;
    while checked < 50 {
        let mut wb = random_dag(&mut rng, 15);
        let formulas: Vec<CellAddress> = wb.formulas().map(|(a, _)| a).collect();
        let literals: Vec<CellAddress> = wb.sheets()[0]
            .cells()
            .filter(|(_, _, c)| !c.content.is_formula())
            .map(|(c, r, _)| CellAddress::new("S", c, r))
            .collect();
        if formulas.is_empty() {
            continue;
        }
        checked += 1;
        let targets: Vec<CellAddress> = formulas.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
        let targets = if targets.is_empty() { vec![formulas[formulas.len() - 1].clone()] } else { targets };
        let inputs: Vec<CellAddress> = literals.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();

        let mut markings: Vec<(CellAddress, Role)> = inputs.iter().map(|a| (a.clone(), Role::Input)).collect();
        markings.extend(targets.iter().map(|a| (a.clone(), Role::Output)));
        let names = mark_roles(&mut wb, &markings).map_err(|e| e.to_string())?;
        let mut s = TestScenario::new("p4");
        for (i, n) in names.iter().enumerate() {
            if i < inputs.len() {
                s = s.input(n, 1.0);
            } else {
                s = s.expect(Expectation::exact(n, 0.0));
            }
        }
        let verdict = validate_scenario(&wb, &s).map_err(|e| e.to_string())?;
        let reported: BTreeSet<CellAddress> = verdict
            .issues
            .iter()
            .filter_map(|i| match i {
                ScenarioIssue::MissingInput { address } => Some(address.clone()),
                _ => None,
            })
            .collect();
        let input_set: BTreeSet<CellAddress> = inputs.into_iter().collect();
        let expected: BTreeSet<CellAddress> = brute_closure(&wb, &targets)
            .into_iter()
            .filter(|a| matches!(wb.content(a), CellContent::Value(_)) && !input_set.contains(a))
            .collect();
        if reported != expected {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} of 50 workbooks disagree"))?;
    Ok("50 workbooks, 0 mismatches".into())
}

// P5: evaluator against direct arithmetic, recalculation against fixpoint.

enum Arith {
    Num(f64),
    Neg(Box<Arith>),
    Bin(char, Box<Arith>, Box<Arith>),
}

fn random_arith(rng: &mut StdRng, depth: u32) -> Arith {
    if depth == 0 || rng.gen_bool(0.3) {
        let n = if rng.gen_bool(0.5) {
            f64::from(rng.gen_range(0..20))
        } else {
            (rng.gen::<f64>() * 100.0 * 1e4).round() / 1e4
        };
        return Arith::Num(n);
    }
    if rng.gen_bool(0.1) {
        return Arith::Neg(Box::new(random_arith(rng, depth - 1)));
    }
    let op = ['+', '-', '*', '/', '^'][rng.gen_range(0..5)];
    let rhs = if op == '^' { Arith::Num(f64::from(rng.gen_range(0..4))) } else { random_arith(rng, depth - 1) };
    Arith::Bin(op, Box::new(random_arith(rng, depth - 1)), Box::new(rhs))
}

fn arith_text(e: &Arith) -> String {
    match e {
        Arith::Num(n) => format!("{n}"),
        Arith::Neg(x) => format!("(-{})", arith_text(x)),
        Arith::Bin(op, l, r) => format!("({}{op}{})", arith_text(l), arith_text(r)),
    }
}

/// `Err` for a division by zero or a non-finite intermediate.
fn arith_eval(e: &Arith) -> Result<f64, ErrorKind> {
    let v = match e {
        Arith::Num(n) => *n,
        Arith::Neg(x) => -arith_eval(x)?,
        Arith::Bin(op, l, r) => {
            let (a, b) = (arith_eval(l)?, arith_eval(r)?);
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' if b == 0.0 => return Err(ErrorKind::Div0),
                '/' => a / b,
                _ => a.powf(b),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ErrorKind::Value)
    }
}

fn fixpoint(wb: &Workbook) -> BTreeMap<CellAddress, CellValue> {
    let mut values: BTreeMap<CellAddress, CellValue> = BTreeMap::new();
    for sheet in wb.sheets() {
        for (c, r, cell) in sheet.cells() {
            if let CellContent::Value(v) = &cell.content {
                values.insert(CellAddress::new(sheet.name(), c, r), v.to_value());
            }
        }
    }
    let formulas: Vec<_> = wb.formulas().map(|(a, f)| (a, f.clone())).collect();
    for _ in 0..=formulas.len() + 1 {
        let mut changed = false;
        for (a, f) in &formulas {
            let current = values.clone();
            let lookup = |x: &CellAddress| current.get(x).cloned().unwrap_or(CellValue::Blank);
            let v = evaluate(f.ast(), &a.sheet, &lookup);
            if values.get(a) != Some(&v) {
                values.insert(a.clone(), v);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    values
}

fn p5() -> Verdict {
    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    let mut worst = 0.0f64;
    let a1 = addr("S!A1");
    for i in 0..1000 {
        let e = random_arith(&mut rng, 5);
        let text = format!("={}", arith_text(&e));
        let mut wb = Workbook::with_sheets(["S"]).unwrap();
        wb.set_cell(&a1, CellContent::formula(&text).map_err(|err| format!("{text}: {err}"))?).unwrap();
        let got = recalculate(&wb, &BTreeMap::new()).get(&a1);
        match (arith_eval(&e), got) {
            (Ok(want), CellValue::Number(n)) => {
                let rel = (n - want).abs() / want.abs().max(1.0);
                worst = worst.max(rel);
                ensure(rel <= P5_REL_TOL, || format!("formula {i} {text}: {n} vs {want}"))?;
            }
            (Err(kind), CellValue::Error(k)) if kind == k => {}
            (want, got) => return Err(format!("formula {i} {text}: want {want:?}, got {got:?}")),
        }
    }
    for w in 0..100 {
        let wb = random_dag(&mut rng, 15);
        let state = recalculate(&wb, &BTreeMap::new());
        for (a, v) in fixpoint(&wb) {
            ensure(state.get(&a) == v, || format!("workbook {w}: {a} is {:?}, fixpoint {v:?}", state.get(&a)))?;
        }
    }
    Ok(format!("1000 formulas (worst relative error {worst:.1e}), 100 workbooks exact"))
}

// P6: a false-positive flag survives save and reload.

fn p6() -> Verdict {
    let mut wb = fixture("tariff-comparison.sgwb.json");
    let config = StaticRuleConfig::default();
    let first = run_cycle(&wb, &config, None);
    let target = first.findings.iter().find(|f| f.rule_id == RULE_REPEATED_REF).ok_or("no finding to flag")?.clone();
    ensure(first.suppressed_count == 0, || "already suppressed".into())?;
    wb.update_guardian(|g| merge_flag(&mut g.flags, FindingFlag::new(&target.key, FlagStatus::FalsePositive, "", "")));
    let reloaded = load_workbook(&save_workbook(&wb)).map_err(|e| e.to_string())?;
    let again = run_cycle(&reloaded, &config, Some(&first));
    ensure(again.findings.iter().all(|f| f.key != target.key), || "flagged finding came back".into())?;
    ensure(again.suppressed_count == 1, || format!("suppressed_count {}", again.suppressed_count))?;
    ensure(again.findings.len() == first.findings.len() - 1, || "other findings changed".into())?;
    Ok(format!("{} hidden after reload, suppressed_count = 1", target.key))
}

// P7: publication order under a fake clock.

/// Replays 100 edits with random gaps and inspection delays; returns the
/// published generations and the final edit's generation.
fn simulate(seed: u64) -> Result<(Vec<u64>, u64), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let debounce = Duration::from_millis(300);
    let mut scheduler = Scheduler::new(debounce);
    let mailbox = Mailbox::new();
    let mut wb = Workbook::with_sheets(["S"]).unwrap();
    let config = StaticRuleConfig::default();
    let mut published = Vec::new();
    let mut running: Option<(u64, Duration, Workbook)> = None;
    let mut now = Duration::ZERO;
    let mut edits = 0;
    let mut next_edit = Duration::ZERO;

    loop {
        let finish = running.as_ref().map(|(_, t, _)| *t);
        let due = scheduler.next_due();
        let edit_at = (edits < 100).then_some(next_edit);
        let Some(t) = [finish, due, edit_at].into_iter().flatten().min() else { break };
        now = now.max(t);
        if finish == Some(now) {
            let (gen, _, snapshot) = running.take().unwrap();
            let report = run_cycle(&snapshot, &config, None);
            if scheduler.on_complete(gen) {
                ensure(mailbox.publish(report), || format!("mailbox refused generation {gen}"))?;
                published.push(gen);
            }
        } else if edit_at == Some(now) {
            let a = CellAddress::new("S", rng.gen_range(1..4), rng.gen_range(1..6));
            let content = if rng.gen_bool(0.5) {
                CellContent::number(f64::from(rng.gen_range(0..100)))
            } else {
                CellContent::formula("=A1+A1").unwrap()
            };
            let receipt = wb.set_cell(&a, content).unwrap();
            scheduler.on_edit(receipt.generation, now);
            edits += 1;
            next_edit = now + Duration::from_millis(rng.gen_range(0..700));
        }
        if running.is_none() {
            if let Some(gen) = scheduler.poll(now) {
                ensure(gen == wb.generation(), || "scheduled a stale generation".into())?;
                let delay = Duration::from_millis(rng.gen_range(10..900));
                running = Some((gen, now + delay, wb.clone()));
            }
        }
    }
    Ok((published, wb.generation()))
}

fn p7() -> Verdict {
    let reference = simulate(7)?;
    for run in 0..10 {
        let (published, last) = simulate(7)?;
        ensure((published.clone(), last) == reference, || format!("run {run} diverged"))?;
        ensure(published.windows(2).all(|w| w[0] < w[1]), || format!("run {run}: not increasing {published:?}"))?;
        ensure(published.last().is_some_and(|&g| g >= last), || format!("run {run}: ends below {last}"))?;
    }
    for seed in 100..110 {
        let (published, last) = simulate(seed)?;
        ensure(published.windows(2).all(|w| w[0] < w[1]), || format!("seed {seed}: not increasing"))?;
        ensure(published.last().is_some_and(|&g| g >= last), || format!("seed {seed}: ends below {last}"))?;
    }
    Ok(format!("10 identical runs, {} reports ending at generation {}", reference.0.len(), reference.1))
}

// P8: every violating row is reported on every run.

fn violations(wb: &Workbook) -> BTreeSet<CellAddress> {
    let sheet = wb.sheet("Orders").unwrap();
    let (max_row, _) = sheet.used_extent();
    (2..=max_row)
        .filter(|&r| {
            let a = wb.literal(&CellAddress::new("Orders", 1, r)).display_text();
            let c = wb.literal(&CellAddress::new("Orders", 3, r)).display_text();
            let ok = c.len() == 13 && c[..10].bytes().all(|b| b.is_ascii_digit()) && &c[10..] == "bar";
            a.starts_with("foo") && !ok
        })
        .map(|r| CellAddress::new("Orders", 3, r))
        .collect()
}

fn p8() -> Verdict {
    let mut wb = fixture("playground.sgwb.json");
    let expected = violations(&wb);
    ensure(expected.len() == 2, || format!("fixture has {} violating rows", expected.len()))?;
    let config = StaticRuleConfig::default();
    for run in 0..5 {
        // Each run follows an edit somewhere else entirely.
        wb.set_cell(&addr("Calc!D1"), CellContent::number(f64::from(run))).unwrap();
        let got: BTreeSet<CellAddress> = run_all(&wb, &config)
            .into_iter()
            .filter(|f| f.rule_id == RULE_VALIDATION)
            .map(|f| f.primary().unwrap().clone())
            .collect();
        ensure(got == expected, || format!("run {run}: {got:?}"))?;
    }
    Ok("2 findings on each of 5 runs".into())
}

// P9: save/load round trip.

const SHEET_NAMES: [&str; 5] = ["S", "Data", "My sheet", "It's", "AB12"];
const FORMULAS: [&str; 6] = [
    "=A1+B2*2",
    "=SUM(A1:B3)/4",
    "=IF(A1>0,\"yes\",\"no\")&\"!\"",
    "='My sheet'!A1-Data!$B$2",
    "=VLOOKUP(A1,A1:C3,2,FALSE)",
    "=ROUND(-A1^2,1)",
];

#[derive(Debug, Clone)]
enum Content {
    Number(f64),
    Text(String),
    Bool(bool),
    Formula(usize),
}

fn content_strategy() -> impl Strategy<Value = Content> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |n| n.is_finite()).prop_map(Content::Number),
        "\\PC{0,12}".prop_map(Content::Text),
        any::<bool>().prop_map(Content::Bool),
        (0..FORMULAS.len()).prop_map(Content::Formula),
    ]
}

type Recipe = (usize, Vec<(usize, u32, u32, Content, Option<u8>)>, Vec<(String, usize)>, bool, Option<u64>);

fn recipe() -> impl Strategy<Value = Recipe> {
    (
        1..=SHEET_NAMES.len(),
        prop::collection::vec((0..5usize, 1..8u32, 1..12u32, content_strategy(), prop::option::of(any::<u8>())), 0..30),
        prop::collection::vec(("[a-z][a-z0-9_]{0,6}", 0..30usize), 0..4),
        any::<bool>(),
        prop::option::of(0..50u64),
    )
}

fn build((sheets, cells, names, with_rules, hold): Recipe) -> Workbook {
    let mut wb = Workbook::with_sheets(SHEET_NAMES[..sheets].iter().copied()).unwrap();
    let mut placed = Vec::new();
    for (s, c, r, content, color) in cells {
        let a = CellAddress::new(SHEET_NAMES[s % sheets], c, r);
        let content = match content {
            Content::Number(n) => CellContent::number(n),
            Content::Text(t) => CellContent::text(&t),
            Content::Bool(b) => CellContent::Value(sguard_core::grid::Scalar::Bool(b)),
            Content::Formula(i) => CellContent::formula(FORMULAS[i]).unwrap(),
        };
        wb.set_cell(&a, content).unwrap();
        if let Some(v) = color {
            let hex = format!("#{v:02x}{v:02x}{:02x}", v / 2);
            wb.set_format(&a, CellFormat::colors(Some(&hex), (v % 2 == 0).then_some("#FFFFFF"))).unwrap();
        }
        placed.push(a);
    }
    for (name, i) in names {
        if !placed.is_empty() {
            wb.bind_name(&name, placed[i % placed.len()].clone()).unwrap();
        }
    }
    if with_rules {
        let mut config = StaticRuleConfig::default();
        config.set_enabled(RULE_CONSTANT, false).unwrap();
        let rule =
            sguard_core::validation::compile_rule(r#"RULE r ON S!A:C REQUIRE C matches(digits(3), "-", any)"#).unwrap();
        wb.update_guardian(|g| {
            g.rule_config = Some(config);
            g.validation_rules.push(rule);
            g.extra.insert("futureKey".into(), serde_json::json!([1, "two"]));
        });
    }
    if let Some(until) = hold {
        let flag = FindingFlag::new("00112233aabbccdd", FlagStatus::HoldOff { until_generation: until }, "later", "qa");
        wb.update_guardian(|g| merge_flag(&mut g.flags, flag));
    }
    wb
}

fn p9() -> Verdict {
    let mut runner = TestRunner::new(Config { cases: 200, failure_persistence: None, ..Config::default() });
    let result = runner.run(&recipe(), |r| {
        let wb = build(r);
        let bytes = save_workbook(&wb);
        let back = load_workbook(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &wb);
        prop_assert_eq!(save_workbook(&wb), bytes.clone());
        prop_assert_eq!(save_workbook(&back), bytes);
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok("200 generated workbooks round-trip byte for byte".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, Criterion); 9] = [
        ("P1 repeated-reference detection", p1),
        ("P2 seeded-fault fixture parity", p2),
        ("P3 maintenance trap", p3),
        ("P4 scenario validation oracle", p4),
        ("P5 evaluator oracle", p5),
        ("P6 flag persistence", p6),
        ("P7 live-mode monotonicity", p7),
        ("P8 data validation breadth", p8),
        ("P9 round-trip", p9),
    ];
    let mut failed = Vec::new();
    for (label, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {label}: {detail}"),
            Err(reason) => {
                println!("FAIL {label}: {reason}");
                failed.push(label);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
