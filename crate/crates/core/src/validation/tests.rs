use std::collections::BTreeMap;

use super::*;
use crate::calc::recalculate;
use crate::edit::EditKind;
use crate::grid::CellContent;

const FOOBAR: &str = r#"RULE foobar ON Orders!A2:C100 WHEN A starts_with("foo") REQUIRE C matches(digits(10), "bar")"#;

fn orders(rows: &[(&str, &str)]) -> Workbook {
    let mut wb = Workbook::with_sheets(["Orders"]).unwrap();
    wb.set_cell(&"Orders!A1".parse().unwrap(), CellContent::text("Code")).unwrap();
    for (i, (a, c)) in rows.iter().enumerate() {
        let r = i as u32 + 2;
        if !a.is_empty() {
            wb.set_cell(&CellAddress::new("Orders", 1, r), CellContent::text(*a)).unwrap();
        }
        if !c.is_empty() {
            wb.set_cell(&CellAddress::new("Orders", 3, r), CellContent::text(*c)).unwrap();
        }
    }
    wb
}

fn run(wb: &Workbook, rules: &[ValidationRule]) -> Vec<Finding> {
    evaluate_rules(wb, &recalculate(wb, &BTreeMap::new()), rules)
}

#[test]
fn compiles_the_foobar_rule() {
    let rule = compile_rule(FOOBAR).unwrap();
    assert_eq!(rule.id, "foobar");
    assert_eq!(rule.scope, Scope { sheet: "Orders".into(), start_col: 1, end_col: 3, rows: Some((2, 100)) });
    let guard = rule.guard.as_ref().unwrap();
    assert_eq!(guard.column, 1);
    assert_eq!(guard.expr, CondExpr::Leaf(Condition::StartsWith("foo".into())));
    assert_eq!(rule.requirement.column, 3);
    assert_eq!(
        rule.requirement.expr,
        CondExpr::Leaf(Condition::ShapePattern(vec![
            PatternElement::Digits(10),
            PatternElement::Literal("bar".into())
        ]))
    );
    assert_eq!(rule.to_string(), FOOBAR);
}

#[test]
fn syntax_errors() {
    assert!(compile_rule("RULE r ON S!A:C REQUIRE C").is_err());
    assert!(compile_rule("RULE r ON S!A:C REQUIRE").is_err());
    assert!(compile_rule("RULE r ON S!A:C REQUIRE C shiny").is_err());
    assert!(compile_rule("RULE r ON S!A:C REQUIRE D non_empty").is_err());
    assert!(compile_rule("RULE r ON S!A2:C REQUIRE C non_empty").is_err());
    assert!(compile_rule("RULE r ON S!A:C REQUIRE C between(5, 1)").is_err());
    assert!(compile_rule("RULE r ON S!A:C REQUIRE C non_empty extra").is_err());
}

#[test]
fn boolean_structure() {
    let rule = compile_rule("rule r on S!A:C require C is_number and between(0, 10)").unwrap();
    assert!(matches!(&rule.requirement.expr, CondExpr::And(p) if p.len() == 2));
    assert_eq!(rule.requirement.expr.leaves(), 2);
    let rule =
        compile_rule(r#"RULE r ON 'My sheet'!A:C REQUIRE C NOT (contains("x") OR ends_with("y")) AND non_empty"#)
            .unwrap();
    assert_eq!(
        rule.to_string(),
        r#"RULE r ON 'My sheet'!A:C REQUIRE C NOT (contains("x") OR ends_with("y")) AND non_empty"#
    );
    assert_eq!(compile_rule(&rule.to_string()).unwrap(), rule);
}

#[test]
fn foobar_rows() {
    let wb = orders(&[("foo-one", "1234567890bar"), ("foo-two", "123bar"), ("else", "")]);
    let f = run(&wb, &[compile_rule(FOOBAR).unwrap()]);
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].locations[0].address.to_string(), "Orders!C3");
    assert!(f[0].message.contains("digits(10)"));
}

#[test]
fn every_violating_row_is_reported_every_time() {
    let wb = orders(&[("foo-a", "12bar"), ("ok", "x"), ("foo-b", "nope")]);
    let rules = [compile_rule(FOOBAR).unwrap()];
    for _ in 0..3 {
        let f = run(&wb, &rules);
        let at: Vec<String> = f.iter().map(|x| x.locations[0].address.to_string()).collect();
        assert_eq!(at, ["Orders!C2", "Orders!C4"]);
    }
}

#[test]
fn numbers_match_through_display_text() {
    let mut wb = orders(&[("foo", "")]);
    wb.set_cell(&"Orders!C2".parse().unwrap(), CellContent::formula("=1234567890").unwrap()).unwrap();
    let rule = compile_rule("RULE n ON Orders!A:C WHEN A starts_with(\"foo\") REQUIRE C matches(digits(10))").unwrap();
    assert!(run(&wb, &[rule]).is_empty());
}

#[test]
fn failure_path_points_into_and() {
    let rule = compile_rule("RULE r ON S!A:A REQUIRE A non_empty AND is_number").unwrap();
    let err = rule.requirement.expr.check(&CellValue::Text("x".into())).unwrap_err();
    assert_eq!(err, ["AND[2]", "is_number"]);
}

#[test]
fn scope_follows_structural_edits() {
    let mut wb = orders(&[("foo-a", "12bar"), ("ok", "x")]);
    wb.update_guardian(|g| g.validation_rules.push(compile_rule(FOOBAR).unwrap()));
    wb.apply_structural_edit(&StructuralEdit::new(EditKind::InsertCols, "Orders", 2, 1)).unwrap();
    let rule = &wb.guardian().validation_rules[0];
    assert_eq!(
        rule.to_string(),
        r#"RULE foobar ON Orders!A2:D100 WHEN A starts_with("foo") REQUIRE D matches(digits(10), "bar")"#
    );
    let f = run(&wb, &wb.guardian().validation_rules);
    assert_eq!(f[0].locations[0].address.to_string(), "Orders!D2");

    wb.apply_structural_edit(&StructuralEdit::new(EditKind::DeleteCols, "Orders", 4, 1)).unwrap();
    let rule = &wb.guardian().validation_rules[0];
    assert!(rule.broken.is_some());
    let f = run(&wb, &wb.guardian().validation_rules);
    assert_eq!(f.len(), 1);
    assert!(f[0].message.contains("no longer applies"));
}

#[test]
fn serde_round_trip() {
    let rule = compile_rule(FOOBAR).unwrap();
    let json = serde_json::to_value(&rule).unwrap();
    assert_eq!(json["source"], FOOBAR);
    let back: ValidationRule = serde_json::from_value(json).unwrap();
    assert_eq!(back, rule);
}
