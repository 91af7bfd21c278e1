//! HTTP API over one guarded workbook.
//!
//! Every mutation goes through the single [`Session`]; reports are read from
//! the live engine's mailbox with long-polling.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use sguard_core::address::CellAddress;
use sguard_core::calc::recalculate;
use sguard_core::edit::StructuralEdit;
use sguard_core::engine::{effective_config, Mailbox, Session};
use sguard_core::findings::{merge_flag, FindingFlag, FlagStatus};
use sguard_core::grid::{CellEdit, CellFormat, EditReceipt, GridError, Scalar, Workbook};
use sguard_core::inspect::{StaticRuleConfig, STATIC_RULES};
use sguard_core::io::{workbook_json, write_workbook, CellJson};
use sguard_core::scenario::{
    add_scenario, mark_roles, run_scenario, validate_scenario, Expectation, Role, ScenarioError, TestScenario,
};
use sguard_core::validation::compile_rule;

pub const DEFAULT_POLL_TIMEOUT: Duration = Duration::from_secs(30);

pub struct ServerOptions {
    pub poll_timeout: Duration,
    /// Written after every successful mutation.
    pub save_path: Option<PathBuf>,
    pub fallback: StaticRuleConfig,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { poll_timeout: DEFAULT_POLL_TIMEOUT, save_path: None, fallback: StaticRuleConfig::default() }
    }
}

pub struct AppState {
    session: Mutex<Session>,
    mailbox: Arc<Mailbox>,
    options: ServerOptions,
}

impl AppState {
    /// The session must have a live engine; its mailbox feeds `/api/report`.
    pub fn new(session: Session, options: ServerOptions) -> Arc<Self> {
        let mailbox = Arc::clone(session.mailbox().expect("session without a live engine"));
        Arc::new(Self { session: Mutex::new(session), mailbox, options })
    }

    pub fn mailbox(&self) -> &Arc<Mailbox> {
        &self.mailbox
    }

    pub fn generation(&self) -> u64 {
        self.lock().generation()
    }

    /// Swaps in a workbook read from elsewhere, e.g. the file changed on
    /// disk. Returns the new generation, or `None` when nothing differs.
    pub fn reload(&self, wb: Workbook) -> Option<u64> {
        let strip = |w: &Workbook| {
            let mut v = workbook_json(w);
            v.as_object_mut().map(|o| o.remove("generation"));
            v
        };
        let mut session = self.lock();
        if strip(session.workbook()) == strip(&wb) {
            return None;
        }
        session.edit(|current| Ok::<_, std::convert::Infallible>(current.replace_with(wb).generation)).ok()
    }

    fn lock(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs a mutation and persists the result when it succeeded.
    fn mutate<T>(&self, f: impl FnOnce(&mut Workbook) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut session = self.lock();
        let out = session.edit(f)?;
        if let Some(path) = &self.options.save_path {
            write_workbook(path, session.workbook())
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "saveFailed", e))?;
        }
        Ok(out)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    reason: &'static str,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, reason: &'static str, message: impl ToString) -> Self {
        Self { status, reason, message: message.to_string(), extra: None }
    }

    fn bad(reason: &'static str, message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, reason, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "reason": self.reason, "message": self.message });
        if let Some(Value::Object(extra)) = self.extra {
            error.as_object_mut().expect("object").extend(extra);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<GridError> for ApiError {
    fn from(e: GridError) -> Self {
        let reason = match &e {
            GridError::UnknownSheet(_) => "unknownSheet",
            GridError::DuplicateSheet(_) => "duplicateSheet",
            GridError::InvalidSheetName(_) => "invalidSheetName",
            GridError::OutOfRange(_) => "outOfRange",
            GridError::UnknownName(_) => "unknownName",
            GridError::InvalidName(_) => "invalidName",
            GridError::InvalidValue(_) => "invalidValue",
            GridError::Syntax(_) => "syntaxError",
        };
        Self::bad(reason, e)
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        if let ScenarioError::Grid(g) = e {
            return g.into();
        }
        let reason = match &e {
            ScenarioError::RoleConflict { .. } => "roleConflict",
            ScenarioError::InputIsFormula(_) => "inputIsFormula",
            ScenarioError::OutputNotFormula(_) => "outputNotFormula",
            ScenarioError::UnknownName(_) => "unknownName",
            ScenarioError::UnknownScenario(name) => {
                return Self::new(StatusCode::NOT_FOUND, "unknownScenario", format!("unknown scenario {name:?}"))
            }
            ScenarioError::DuplicateScenario(_) => "duplicateScenario",
            ScenarioError::Invalid(_) => "invalidScenario",
            ScenarioError::FormulaOverride(_) => "formulaOverride",
            ScenarioError::Grid(_) => unreachable!("handled above"),
        };
        Self::bad(reason, e)
    }
}

/// Parses a request body, mapping failures to a 400 with a JSON error.
fn body<T: serde::de::DeserializeOwned>(raw: axum::body::Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(&raw).map_err(|e| ApiError::bad("invalidBody", e))
}

fn parse_addr(text: &str) -> Result<CellAddress, ApiError> {
    text.parse::<CellAddress>()
        .ok()
        .filter(CellAddress::in_bounds)
        .ok_or_else(|| ApiError::bad("invalidAddress", format!("not a sheet-qualified cell address: {text:?}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/workbook", get(get_workbook))
        .route("/api/cells", patch(patch_cells))
        .route("/api/structural", post(post_structural))
        .route("/api/report", get(get_report))
        .route("/api/scenarios", get(list_scenarios).post(create_scenario))
        .route("/api/scenarios/{name}/run", post(run_named_scenario))
        .route("/api/roles", post(post_roles))
        .route("/api/findings/{key}/flag", post(flag_finding))
        .route("/api/rules", get(get_rules).patch(patch_rules))
        .with_state(state)
}

/// Binds and serves until the process stops.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_listener(state, listener).await
}

pub async fn serve_listener(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn get_workbook(State(state): State<Arc<AppState>>) -> Json<Value> {
    let snapshot = state.lock().snapshot();
    let computed = recalculate(&snapshot, &BTreeMap::new());
    let values: serde_json::Map<String, Value> = snapshot
        .formulas()
        .map(|(addr, _)| {
            let v = serde_json::to_value(computed.get(&addr)).expect("value serializes");
            (addr.to_string(), v)
        })
        .collect();
    Json(json!({
        "generation": snapshot.generation(),
        "workbook": workbook_json(&snapshot),
        "values": values,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellPatch {
    addr: String,
    /// `null` clears the cell; absent leaves content unchanged.
    #[serde(default, deserialize_with = "double_option")]
    content: Option<Option<CellJson>>,
    #[serde(default)]
    format: Option<CellFormat>,
}

fn double_option<'de, D: serde::Deserializer<'de>, T: Deserialize<'de>>(d: D) -> Result<Option<Option<T>>, D::Error> {
    Option::<T>::deserialize(d).map(Some)
}

fn check_if_match(headers: &HeaderMap, current: u64) -> Result<(), ApiError> {
    let Some(raw) = headers.get("if-match") else { return Ok(()) };
    let text = raw.to_str().unwrap_or("").trim().trim_matches('"');
    let expected: u64 =
        text.parse().map_err(|_| ApiError::bad("invalidIfMatch", "If-Match must be a generation number"))?;
    if expected != current {
        let mut e = ApiError::new(
            StatusCode::CONFLICT,
            "generationConflict",
            format!("workbook is at generation {current}, not {expected}"),
        );
        e.extra = Some(json!({ "generation": current }));
        return Err(e);
    }
    Ok(())
}

async fn patch_cells(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    raw: axum::body::Bytes,
) -> Result<Json<EditReceipt>, ApiError> {
    let patches: Vec<CellPatch> = body(raw)?;
    let mut edits = Vec::with_capacity(patches.len());
    for (i, p) in patches.into_iter().enumerate() {
        let addr = parse_addr(&p.addr)?;
        let content =
            match p.content {
                None => None,
                Some(None) => Some(sguard_core::grid::CellContent::Empty),
                Some(Some(json)) => Some(json.to_content().map_err(|(_, reason)| {
                    ApiError::bad("invalidContent", format!("entry {i} ({}): {reason}", p.addr))
                })?),
            };
        let format = p.format.map(|f| CellFormat::colors(f.font_color.as_deref(), f.fill_color.as_deref()));
        edits.push(CellEdit { addr, content, format });
    }
    let receipt = state.mutate(|wb| {
        check_if_match(&headers, wb.generation())?;
        Ok(wb.apply_cell_edits(edits)?)
    })?;
    Ok(Json(receipt))
}

async fn post_structural(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    raw: axum::body::Bytes,
) -> Result<Json<EditReceipt>, ApiError> {
    let edit: StructuralEdit = body(raw)?;
    let receipt = state.mutate(|wb| {
        check_if_match(&headers, wb.generation())?;
        Ok(wb.apply_structural_edit(&edit)?)
    })?;
    Ok(Json(receipt))
}

#[derive(Deserialize)]
struct ReportQuery {
    after: Option<u64>,
}

async fn get_report(State(state): State<Arc<AppState>>, Query(q): Query<ReportQuery>) -> Response {
    let mailbox = Arc::clone(&state.mailbox);
    let timeout = state.options.poll_timeout;
    let found = tokio::task::spawn_blocking(move || mailbox.wait_newer(q.after, timeout)).await.ok().flatten();
    match found {
        Some(report) => Json(&*report).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn list_scenarios(State(state): State<Arc<AppState>>) -> Json<Vec<TestScenario>> {
    Json(state.lock().workbook().guardian().scenarios.clone())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NewScenario {
    name: String,
    #[serde(default)]
    inputs: BTreeMap<String, Scalar>,
    expectations: Vec<Expectation>,
    #[serde(default)]
    allow_formula_override: bool,
}

async fn create_scenario(State(state): State<Arc<AppState>>, raw: axum::body::Bytes) -> Result<Response, ApiError> {
    let req: NewScenario = body(raw)?;
    let mut scenario = TestScenario::new(req.name);
    scenario.inputs = req.inputs;
    scenario.expectations = req.expectations;
    scenario.allow_formula_override = req.allow_formula_override;
    let receipt = state.mutate(|wb| Ok(add_scenario(wb, scenario.clone())?))?;
    let snapshot = state.lock().snapshot();
    let validation = validate_scenario(&snapshot, &scenario)?;
    let result = run_scenario(&snapshot, &scenario)?;
    let out = json!({
        "generation": receipt.generation,
        "scenario": scenario,
        "validation": validation,
        "result": result,
    });
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn run_named_scenario(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let snapshot = state.lock().snapshot();
    let scenario = snapshot.guardian().scenario(&name).cloned().ok_or(ScenarioError::UnknownScenario(name))?;
    let result = run_scenario(&snapshot, &scenario)?;
    Ok(Json(json!({ "passed": result.passed(), "result": result })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleRequest {
    addr: String,
    role: String,
}

async fn post_roles(State(state): State<Arc<AppState>>, raw: axum::body::Bytes) -> Result<Json<Value>, ApiError> {
    let reqs: Vec<RoleRequest> = body(raw)?;
    let mut markings = Vec::with_capacity(reqs.len());
    for r in reqs {
        let role: Role =
            r.role.parse().map_err(|_| ApiError::bad("invalidRole", format!("unknown role {:?}", r.role)))?;
        markings.push((parse_addr(&r.addr)?, role));
    }
    let (names, generation) = state.mutate(|wb| {
        let names = mark_roles(wb, &markings)?;
        Ok((names, wb.generation()))
    })?;
    Ok(Json(json!({ "names": names, "generation": generation })))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct FlagRequest {
    status: String,
    /// Hold-off limit: the finding stays hidden in reports below this generation.
    until: Option<u64>,
    #[serde(default)]
    note: String,
    #[serde(default)]
    author: String,
}

async fn flag_finding(
    State(state): State<Arc<AppState>>,
    Path(key): Path<String>,
    raw: axum::body::Bytes,
) -> Result<Json<Value>, ApiError> {
    let req: FlagRequest = body(raw)?;
    if key.len() != 16 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ApiError::bad("invalidKey", "finding keys are 16 hex digits"));
    }
    let status = match (req.status.as_str(), req.until) {
        ("falsePositive", None) => FlagStatus::FalsePositive,
        ("holdOff", Some(until_generation)) => FlagStatus::HoldOff { until_generation },
        ("holdOff", None) => return Err(ApiError::bad("invalidFlag", "holdOff needs until")),
        ("falsePositive", Some(_)) => return Err(ApiError::bad("invalidFlag", "falsePositive takes no until")),
        (other, _) => return Err(ApiError::bad("invalidFlag", format!("unknown status {other:?}"))),
    };
    let flag = FindingFlag::new(key.to_ascii_lowercase(), status, req.note, req.author);
    let (stored, generation) = state.mutate(|wb| {
        let (stored, receipt) = wb.update_guardian(|g| {
            merge_flag(&mut g.flags, flag.clone());
            g.flags[&flag.key].clone()
        });
        Ok((stored, receipt.generation))
    })?;
    Ok(Json(json!({ "flag": stored, "generation": generation })))
}

async fn get_rules(State(state): State<Arc<AppState>>) -> Json<Value> {
    let session = state.lock();
    let wb = session.workbook();
    let config = effective_config(wb, &state.options.fallback);
    Json(json!({
        "available": STATIC_RULES,
        "config": config,
        "validationRules": wb.guardian().validation_rules,
    }))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RulesPatch {
    #[serde(default)]
    enable: Vec<String>,
    #[serde(default)]
    disable: Vec<String>,
    constant_allowlist: Option<Vec<f64>>,
    neighbor_min_run: Option<usize>,
    /// Replaces all validation rules with these sources.
    validation_rules: Option<Vec<String>>,
}

async fn patch_rules(State(state): State<Arc<AppState>>, raw: axum::body::Bytes) -> Result<Json<Value>, ApiError> {
    let req: RulesPatch = body(raw)?;
    let validation = match &req.validation_rules {
        None => None,
        Some(sources) => Some(
            sources
                .iter()
                .map(|s| compile_rule(s).map_err(|e| ApiError::bad("ruleSyntax", e)))
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    let fallback = state.options.fallback.clone();
    let generation = state.mutate(|wb| {
        let mut config = effective_config(wb, &fallback).clone();
        for id in &req.enable {
            config.set_enabled(id, true).map_err(|e| ApiError::bad("unknownRule", e))?;
        }
        for id in &req.disable {
            config.set_enabled(id, false).map_err(|e| ApiError::bad("unknownRule", e))?;
        }
        if let Some(list) = &req.constant_allowlist {
            config.constant_allowlist = list.clone();
        }
        if let Some(n) = req.neighbor_min_run {
            if n < 2 {
                return Err(ApiError::bad("invalidParameter", "neighborMinRun must be at least 2"));
            }
            config.neighbor_min_run = n;
        }
        let (_, receipt) = wb.update_guardian(|g| {
            g.rule_config = Some(config);
            if let Some(rules) = validation {
                g.validation_rules = rules;
            }
        });
        Ok(receipt.generation)
    })?;
    let mut out = get_rules(State(state)).await.0;
    out["generation"] = json!(generation);
    Ok(Json(out))
}
