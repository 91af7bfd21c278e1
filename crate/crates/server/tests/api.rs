use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use sguard_core::engine::Session;
use sguard_core::inspect::StaticRuleConfig;
use sguard_core::io::read_workbook;
use sguard_server::{router, AppState, ServerOptions};

fn app(fixture: &str, poll_ms: u64) -> Router {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(fixture);
    let wb = read_workbook(&path).unwrap();
    let session = Session::with_engine(wb, Duration::from_millis(5), StaticRuleConfig::default());
    let options = ServerOptions { poll_timeout: Duration::from_millis(poll_ms), ..Default::default() };
    router(AppState::new(session, options))
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    if_match: Option<u64>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(g) = if_match {
        req = req.header("if-match", g.to_string());
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn report_after(app: &Router, after: Option<u64>) -> Value {
    let uri = after.map_or("/api/report".to_string(), |g| format!("/api/report?after={g}"));
    for _ in 0..50 {
        let (status, body) = call(app, "GET", &uri, None, None).await;
        if status == StatusCode::OK {
            return body;
        }
    }
    panic!("no report after {after:?}");
}

/// Long-polls until a report at or past `gen` arrives.
async fn report_at_least(app: &Router, gen: u64) -> Value {
    let mut report = report_after(app, gen.checked_sub(1)).await;
    while report["generation"].as_u64().unwrap() < gen {
        report = report_after(app, report["generation"].as_u64()).await;
    }
    report
}

fn keys_for(report: &Value, rule: &str, addr: &str) -> Vec<String> {
    report["findings"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|f| f["ruleId"] == rule && f["locations"][0]["address"] == addr)
        .map(|f| f["key"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn workbook_includes_values_and_generation() {
    let app = app("tariff-comparison-clean.sgwb.json", 200);
    let (status, body) = call(&app, "GET", "/api/workbook", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["generation"], 0);
    assert_eq!(body["values"]["Calculation!K33"], json!({"type": "number", "value": 32.5}));
    assert_eq!(body["workbook"]["sheets"][1]["name"], "Calculation");
}

#[tokio::test]
async fn patch_then_long_poll_sees_newer_report() {
    let app = app("tariff-comparison-clean.sgwb.json", 2000);
    let first = report_after(&app, None).await;
    assert_eq!(first["generation"], 0);
    assert!(first["findings"].as_array().unwrap().is_empty());

    let patch = json!([{"addr": "Calculation!K33", "content": {"f": "=G33+H33+I33+I33+J33"}}]);
    let (status, receipt) = call(&app, "PATCH", "/api/cells", Some(patch), Some(0)).await;
    assert_eq!(status, StatusCode::OK, "{receipt}");
    assert_eq!(receipt["generation"], 1);

    let next = report_after(&app, Some(0)).await;
    assert_eq!(next["generation"], 1);
    assert_eq!(keys_for(&next, "SG-R1-repeated-ref", "Calculation!K33").len(), 1);
    assert!(!next["diff"]["new"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn stale_if_match_conflicts() {
    let app = app("playground.sgwb.json", 200);
    let patch = json!([{"addr": "Calc!B2", "content": {"v": 5}}]);
    let (status, body) = call(&app, "PATCH", "/api/cells", Some(patch.clone()), Some(7)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["reason"], "generationConflict");
    assert_eq!(body["error"]["generation"], 0);
    let (status, _) = call(&app, "PATCH", "/api/cells", Some(patch), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn cells_can_be_cleared_and_formatted() {
    let app = app("playground.sgwb.json", 200);
    let patch = json!([
        {"addr": "Calc!B2", "content": null},
        {"addr": "Calc!B3", "format": {"font": "#fff", "fill": "#fff"}},
    ]);
    let (status, _) = call(&app, "PATCH", "/api/cells", Some(patch), None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, wb) = call(&app, "GET", "/api/workbook", None, None).await;
    let calc = &wb["workbook"]["sheets"][0];
    assert!(calc["cells"].get("B2").is_none());
    assert_eq!(calc["cells"]["B3"]["v"], 2.0);
    assert_eq!(calc["formats"]["B3"]["font"], "#FFF");
}

#[tokio::test]
async fn bad_requests_are_400_with_reason() {
    let app = app("playground.sgwb.json", 200);
    let cases = [
        ("PATCH", "/api/cells", json!([{"addr": "B2", "content": {"v": 1}}]), "invalidAddress"),
        ("PATCH", "/api/cells", json!([{"addr": "Calc!B2", "content": {"f": "=1+"}}]), "invalidContent"),
        ("PATCH", "/api/cells", json!([{"addr": "Nope!B2", "content": {"v": 1}}]), "unknownSheet"),
        ("PATCH", "/api/cells", json!({"addr": "Calc!B2"}), "invalidBody"),
        (
            "POST",
            "/api/structural",
            json!({"kind": "insertRows", "sheet": "Nope", "at": 1, "count": 1}),
            "unknownSheet",
        ),
        ("POST", "/api/roles", json!([{"addr": "Calc!B9", "role": "input"}]), "roleConflict"),
        ("POST", "/api/roles", json!([{"addr": "Calc!C9", "role": "output"}]), "outputNotFormula"),
        ("POST", "/api/roles", json!([{"addr": "Calc!B9", "role": "boss"}]), "invalidRole"),
        ("POST", "/api/findings/xyz/flag", json!({"status": "falsePositive"}), "invalidKey"),
        ("POST", "/api/findings/0123456789abcdef/flag", json!({"status": "holdOff"}), "invalidFlag"),
        ("PATCH", "/api/rules", json!({"disable": ["SG-R9-nothing"]}), "unknownRule"),
        ("PATCH", "/api/rules", json!({"validationRules": ["RULE broken"]}), "ruleSyntax"),
        (
            "POST",
            "/api/scenarios",
            json!({"name": "x", "expectations": [{"target": "nope", "kind": "exact", "value": 1}]}),
            "unknownName",
        ),
    ];
    for (method, uri, body, reason) in cases {
        let (status, out) = call(&app, method, uri, Some(body), None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri} {out}");
        assert_eq!(out["error"]["reason"], reason, "{uri} {out}");
    }
    let (status, out) = call(&app, "POST", "/api/scenarios/missing/run", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(out["error"]["reason"], "unknownScenario");
}

#[tokio::test]
async fn report_times_out_with_204() {
    let app = app("playground.sgwb.json", 50);
    let first = report_after(&app, None).await;
    let gen = first["generation"].as_u64().unwrap();
    let (status, body) = call(&app, "GET", &format!("/api/report?after={gen}"), None, None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(body, Value::Null);
}

#[tokio::test]
async fn flagged_finding_stays_out_of_later_reports() {
    let app = app("tariff-comparison.sgwb.json", 2000);
    let report = report_after(&app, None).await;
    let key = keys_for(&report, "SG-R1-repeated-ref", "Calculation!K33").remove(0);
    let flag = json!({"status": "falsePositive", "note": "intended"});
    let (status, out) = call(&app, "POST", &format!("/api/findings/{key}/flag"), Some(flag), None).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    assert_eq!(out["flag"]["status"], "falsePositive");

    // An unrelated edit afterwards.
    let patch = json!([{"addr": "Tariffs!A10", "content": {"v": "note"}}]);
    let (_, receipt) = call(&app, "PATCH", "/api/cells", Some(patch), None).await;
    let report = report_at_least(&app, receipt["generation"].as_u64().unwrap()).await;
    assert!(report["findings"].as_array().unwrap().iter().all(|f| f["key"] != key.as_str()));
    assert_eq!(report["suppressedCount"], 1);
}

fn new_scenario() -> Value {
    json!({
        "name": "no texts",
        "inputs": {"sg_in_4": 0},
        "expectations": [
            {"target": "sg_out_1", "kind": "interval", "lo": 27, "hi": 29},
            {"target": "sg_out_2", "kind": "exact", "value": 33},
            {"target": "sg_out_3", "kind": "textEquals", "text": "tarifa"},
        ],
    })
}

#[tokio::test]
async fn scenario_lifecycle() {
    let app = app("tariff-comparison-clean.sgwb.json", 200);
    let (_, list) = call(&app, "GET", "/api/scenarios", None, None).await;
    assert_eq!(list.as_array().unwrap().len(), 4);

    let (status, out) = call(&app, "POST", "/api/scenarios", Some(new_scenario()), None).await;
    assert_eq!(status, StatusCode::CREATED, "{out}");
    assert!(out["result"]["results"].as_array().unwrap().iter().all(|r| r["outcome"]["state"] == "pass"), "{out}");

    let (status, run) = call(&app, "POST", "/api/scenarios/no%20texts/run", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(run["passed"], true);

    let partial = json!({"name": "partial", "expectations": [{"target": "sg_out_1", "kind": "exact", "value": 1}]});
    let (status, out) = call(&app, "POST", "/api/scenarios", Some(partial), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(out["error"]["reason"], "invalidScenario");

    let mut dup = new_scenario();
    dup["inputs"] = json!({});
    let (status, out) = call(&app, "POST", "/api/scenarios", Some(dup), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(out["error"]["reason"], "duplicateScenario");
    let (_, list) = call(&app, "GET", "/api/scenarios", None, None).await;
    assert_eq!(list.as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn roles_structural_and_rules() {
    let app = app("playground.sgwb.json", 2000);
    let (status, out) =
        call(&app, "POST", "/api/roles", Some(json!([{"addr": "Orders!B2", "role": "input"}])), None).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    assert_eq!(out["names"], json!(["sg_in_8"]));

    let edit = json!({"kind": "insertRows", "sheet": "Calc", "at": 1, "count": 2});
    let (status, out) = call(&app, "POST", "/api/structural", Some(edit), None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, wb) = call(&app, "GET", "/api/workbook", None, None).await;
    assert_eq!(wb["generation"], out["generation"]);
    assert_eq!(wb["workbook"]["guardian"]["names"]["sg_out_1"], "Calc!B11");
    assert_eq!(wb["workbook"]["sheets"][0]["cells"]["B11"]["f"], "=B4+B5+B6+B6+B7+B8+B9+B10");

    let (_, rules) = call(&app, "GET", "/api/rules", None, None).await;
    assert_eq!(rules["available"].as_array().unwrap().len(), 6);
    let change = json!({"disable": ["SG-R1-repeated-ref"], "neighborMinRun": 4});
    let (status, rules) = call(&app, "PATCH", "/api/rules", Some(change), None).await;
    assert_eq!(status, StatusCode::OK, "{rules}");
    assert_eq!(rules["config"]["neighborMinRun"], 4);
    assert!(!rules["config"]["enabled"].as_array().unwrap().contains(&json!("SG-R1-repeated-ref")));
    let report = report_at_least(&app, rules["generation"].as_u64().unwrap()).await;
    assert!(report["findings"].as_array().unwrap().iter().all(|f| f["ruleId"] != "SG-R1-repeated-ref"));
}

#[tokio::test]
async fn mutations_are_saved_when_a_path_is_set() {
    let dir = std::env::temp_dir().join(format!("sguard-api-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("book.sgwb.json");
    let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/playground.sgwb.json");
    let wb = read_workbook(&src).unwrap();
    let session = Session::with_engine(wb, Duration::from_millis(5), StaticRuleConfig::default());
    let options = ServerOptions { save_path: Some(path.clone()), ..Default::default() };
    let app = router(AppState::new(session, options));
    let patch = json!([{"addr": "Calc!D1", "content": {"v": "saved"}}]);
    let (status, _) = call(&app, "PATCH", "/api/cells", Some(patch), None).await;
    assert_eq!(status, StatusCode::OK);
    let back = read_workbook(&path).unwrap();
    assert_eq!(back.generation(), 1);
    assert_eq!(back.literal(&"Calc!D1".parse().unwrap()).display_text(), "saved");
    std::fs::remove_dir_all(&dir).unwrap();
}
