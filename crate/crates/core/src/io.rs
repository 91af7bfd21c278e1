//! Workbook files (`.sgwb.json`) and CSV import.

use std::collections::BTreeMap;
use std::path::Path;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::address::{split_cell, CellAddress, RangeAddress};
use crate::findings::FindingFlag;
use crate::formula::Formula;
use crate::grid::{CellContent, CellEdit, CellFormat, EditReceipt, GridError, NameTarget, Scalar, Workbook, Worksheet};
use crate::guardian::GuardianSpec;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("format error at {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("unsupported file version {0} (expected {FORMAT_VERSION})")]
    Version(u64),
    #[error("CSV error on line {line}: {reason}")]
    Csv { line: u64, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
}

fn format_err(path: impl Into<String>, reason: impl ToString) -> IoError {
    IoError::Format { path: path.into(), reason: reason.to_string() }
}

/// A stored cell: a literal under `v` or formula source under `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
}

impl CellJson {
    pub fn from_content(content: &CellContent) -> Option<Self> {
        match content {
            CellContent::Empty => None,
            CellContent::Value(v) => Some(Self { v: Some(v.clone()), f: None }),
            CellContent::Formula(f) => Some(Self { v: None, f: Some(f.source().to_string()) }),
        }
    }

    /// Errors carry the sub-path (`v`, `f` or empty) and a reason.
    pub fn to_content(&self) -> Result<CellContent, (&'static str, String)> {
        match (&self.v, &self.f) {
            (Some(Scalar::Number(n)), None) if !n.is_finite() => Err(("v", "number must be finite".into())),
            (Some(v), None) => Ok(CellContent::Value(v.clone())),
            (None, Some(src)) => Formula::parse(src).map(CellContent::Formula).map_err(|e| ("f", e.to_string())),
            _ => Err(("", "needs exactly one of v or f".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum NameJson {
    Target(String),
    Deleted { deleted: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SheetIn {
    name: String,
    #[serde(default)]
    cells: BTreeMap<String, CellJson>,
    #[serde(default)]
    formats: BTreeMap<String, CellFormat>,
}

#[derive(Deserialize)]
struct GuardianIn {
    #[serde(default)]
    names: BTreeMap<String, NameJson>,
    #[serde(flatten)]
    spec: GuardianSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileIn {
    #[allow(dead_code)]
    version: u64,
    #[serde(default)]
    generation: u64,
    sheets: Vec<SheetIn>,
    #[serde(default)]
    guardian: Option<GuardianIn>,
}

/// Serializes occupied cells of a sheet in row-major order.
struct CellsOut<'a>(&'a Worksheet);

impl Serialize for CellsOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<(String, CellJson)> = self
            .0
            .cells()
            .filter_map(|(c, r, cell)| {
                CellJson::from_content(&cell.content).map(|json| (CellAddress::new("", c, r).local(), json))
            })
            .collect();
        let mut map = s.serialize_map(Some(entries.len()))?;
        for (k, v) in &entries {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

struct FormatsOut<'a>(&'a Worksheet);

impl Serialize for FormatsOut<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<(String, &CellFormat)> = self
            .0
            .cells()
            .filter(|(_, _, cell)| !cell.format.is_default())
            .map(|(c, r, cell)| (CellAddress::new("", c, r).local(), &cell.format))
            .collect();
        let mut map = s.serialize_map(Some(entries.len()))?;
        for (k, v) in entries {
            map.serialize_entry(&k, v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct SheetOut<'a> {
    name: &'a str,
    cells: CellsOut<'a>,
    formats: FormatsOut<'a>,
}

#[derive(Serialize)]
struct GuardianOut<'a> {
    names: BTreeMap<&'a str, NameJson>,
    #[serde(flatten)]
    spec: &'a GuardianSpec,
}

#[derive(Serialize)]
struct FileOut<'a> {
    version: u64,
    generation: u64,
    sheets: Vec<SheetOut<'a>>,
    guardian: GuardianOut<'a>,
}

fn file_out(wb: &Workbook) -> FileOut<'_> {
    let names = wb
        .names()
        .iter()
        .map(|(n, t)| {
            let json = match t {
                NameTarget::Dangling(last) => NameJson::Deleted { deleted: last.clone() },
                other => NameJson::Target(other.to_string()),
            };
            (n.as_str(), json)
        })
        .collect();
    FileOut {
        version: FORMAT_VERSION,
        generation: wb.generation(),
        sheets: wb
            .sheets()
            .iter()
            .map(|s| SheetOut { name: s.name(), cells: CellsOut(s), formats: FormatsOut(s) })
            .collect(),
        guardian: GuardianOut { names, spec: wb.guardian() },
    }
}

/// The file representation as a JSON value.
pub fn workbook_json(wb: &Workbook) -> serde_json::Value {
    serde_json::to_value(file_out(wb)).expect("workbook serializes")
}

/// Deterministic, pretty-printed file bytes ending in a newline.
pub fn save_workbook(wb: &Workbook) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&file_out(wb)).expect("workbook serializes");
    out.push(b'\n');
    out
}

pub fn load_workbook(bytes: &[u8]) -> Result<Workbook, IoError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| format_err("$", e))?;
    workbook_from_json(value)
}

pub fn workbook_from_json(value: serde_json::Value) -> Result<Workbook, IoError> {
    match value.get("version") {
        None => return Err(format_err("version", "missing")),
        Some(v) => match v.as_u64() {
            Some(FORMAT_VERSION) => {}
            Some(other) => return Err(IoError::Version(other)),
            None => return Err(format_err("version", "must be an integer")),
        },
    }
    let file: FileIn = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        format_err(path, e.into_inner())
    })?;

    let mut wb = Workbook::new();
    for (i, sheet) in file.sheets.iter().enumerate() {
        wb.add_sheet(sheet.name.clone()).map_err(|e| format_err(format!("sheets[{i}].name"), e))?;
    }
    let mut edits = Vec::new();
    for (i, sheet) in file.sheets.iter().enumerate() {
        let at = |key: &str, what: &str| -> Result<CellAddress, IoError> {
            split_cell(key)
                .filter(|_| !key.contains('$'))
                .map(|(c, r)| CellAddress::new(sheet.name.clone(), c, r))
                .filter(|a| a.in_bounds())
                .ok_or_else(|| format_err(format!("sheets[{i}].{what}.{key}"), "not a cell address"))
        };
        for (key, cell) in &sheet.cells {
            let addr = at(key, "cells")?;
            let content = cell.to_content().map_err(|(sub, reason)| {
                let path = format!("sheets[{i}].cells.{key}");
                format_err(if sub.is_empty() { path } else { format!("{path}.{sub}") }, reason)
            })?;
            edits.push(CellEdit { addr, content: Some(content), format: None });
        }
        for (key, format) in &sheet.formats {
            let addr = at(key, "formats")?;
            let normalized = CellFormat::colors(format.font_color.as_deref(), format.fill_color.as_deref());
            edits.push(CellEdit { addr, content: None, format: Some(normalized) });
        }
    }
    wb.apply_cell_edits(edits)?;

    if let Some(guardian) = file.guardian {
        for (name, target) in guardian.names {
            let path = format!("guardian.names.{name}");
            let target = match target {
                NameJson::Deleted { deleted } => NameTarget::Dangling(deleted),
                NameJson::Target(text) => match text.parse::<CellAddress>() {
                    Ok(a) => NameTarget::Cell(a),
                    Err(_) => NameTarget::Range(text.parse::<RangeAddress>().map_err(|e| format_err(path.clone(), e))?),
                },
            };
            wb.bind_name_quiet(&name, target).map_err(|e| format_err(path, e))?;
        }
        for name in guardian.spec.roles.keys() {
            if wb.resolve_name(name).is_err() {
                return Err(format_err(format!("guardian.roles.{name}"), "role for an unbound name"));
            }
        }
        if let Some(config) = &guardian.spec.rule_config {
            config.validate().map_err(|e| format_err("guardian.ruleConfig.enabled", e))?;
        }
        for (key, flag) in &guardian.spec.flags {
            if &flag.key != key {
                return Err(format_err(format!("guardian.flags.{key}"), "flag key does not match its entry"));
            }
        }
        wb.guardian = guardian.spec;
    }
    wb.set_generation(file.generation);
    Ok(wb)
}

pub fn read_workbook(path: &Path) -> Result<Workbook, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::File { path: path.display().to_string(), source })?;
    load_workbook(&bytes)
}

/// Writes through a sibling temporary file so readers never see a
/// half-written workbook.
pub fn write_workbook(path: &Path, wb: &Workbook) -> Result<(), IoError> {
    let err = |source| IoError::File { path: path.display().to_string(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, save_workbook(wb)).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}

/// A standalone suppression file: a JSON array of flags.
pub fn load_flags(bytes: &[u8]) -> Result<Vec<FindingFlag>, IoError> {
    serde_json::from_slice(bytes).map_err(|e| format_err("$", e))
}

pub fn save_flags(flags: &BTreeMap<String, FindingFlag>) -> Vec<u8> {
    let list: Vec<&FindingFlag> = flags.values().collect();
    let mut out = serde_json::to_vec_pretty(&list).expect("flags serialize");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// Turn fields that read as numbers into numbers.
    pub numeric_detection: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { delimiter: b',', numeric_detection: true }
    }
}

fn as_number(field: &str) -> Option<f64> {
    let t = field.trim();
    if t.is_empty() || !t.chars().all(|c| c.is_ascii_digit() || "+-.eE".contains(c)) {
        return None;
    }
    t.parse::<f64>().ok().filter(|n| n.is_finite())
}

/// Writes CSV records row-major starting at `anchor`, as one edit.
pub fn import_csv(
    wb: &mut Workbook,
    anchor: &CellAddress,
    bytes: &[u8],
    options: CsvOptions,
) -> Result<EditReceipt, IoError> {
    if wb.sheet(&anchor.sheet).is_none() {
        return Err(GridError::UnknownSheet(anchor.sheet.clone()).into());
    }
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).delimiter(options.delimiter).from_reader(bytes);
    let mut edits = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::Csv {
            line: e.position().map_or(i as u64 + 1, |p| p.line()),
            reason: e.to_string(),
        })?;
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                continue;
            }
            let addr = CellAddress::new(anchor.sheet.clone(), anchor.col + j as u32, anchor.row + i as u32);
            let value = match as_number(field).filter(|_| options.numeric_detection) {
                Some(n) => Scalar::Number(n),
                None => Scalar::Text(field.to_string()),
            };
            edits.push(CellEdit { addr, content: Some(CellContent::Value(value)), format: None });
        }
    }
    Ok(wb.apply_cell_edits(edits)?)
}
