//! The in-memory workbook: sheets of sparse cells, stable names, structural
//! edits and immutable snapshots.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::{CellAddress, RangeAddress, MAX_COLS, MAX_ROWS};
use crate::edit::{Shifted, StructuralEdit};
use crate::formula::{self, display_number, CellValue, Formula, SyntaxError};
use crate::guardian::GuardianSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("unknown sheet {0:?}")]
    UnknownSheet(String),
    #[error("sheet {0:?} already exists")]
    DuplicateSheet(String),
    #[error("invalid sheet name {0:?}")]
    InvalidSheetName(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("invalid name {0:?}: must match [A-Za-z_][A-Za-z0-9_]*")]
    InvalidName(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
}

/// A literal cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
    Bool(bool),
}

impl Scalar {
    pub fn to_value(&self) -> CellValue {
        match self {
            Scalar::Number(n) => CellValue::Number(*n),
            Scalar::Text(t) => CellValue::Text(t.clone()),
            Scalar::Bool(b) => CellValue::Bool(*b),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Number(n) => f.write_str(&display_number(*n)),
            Scalar::Text(t) => f.write_str(t),
            Scalar::Bool(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
        }
    }
}

impl From<f64> for Scalar {
    fn from(n: f64) -> Self {
        Scalar::Number(n)
    }
}

impl From<&str> for Scalar {
    fn from(t: &str) -> Self {
        Scalar::Text(t.to_string())
    }
}

/// Font and fill colour; the only formatting the engine looks at.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFormat {
    #[serde(rename = "font", default, skip_serializing_if = "Option::is_none")]
    pub font_color: Option<String>,
    #[serde(rename = "fill", default, skip_serializing_if = "Option::is_none")]
    pub fill_color: Option<String>,
}

impl CellFormat {
    pub fn colors(font: Option<&str>, fill: Option<&str>) -> Self {
        Self { font_color: font.map(normalize_color), fill_color: fill.map(normalize_color) }
    }

    pub fn is_default(&self) -> bool {
        self.font_color.is_none() && self.fill_color.is_none()
    }

    /// Text drawn in the background colour.
    pub fn hides_content(&self) -> bool {
        matches!((&self.font_color, &self.fill_color), (Some(a), Some(b)) if a.eq_ignore_ascii_case(b))
    }
}

fn normalize_color(c: &str) -> String {
    let c = c.trim();
    let hex = c.strip_prefix('#').unwrap_or(c);
    format!("#{}", hex.to_ascii_uppercase())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum CellContent {
    #[default]
    Empty,
    Value(Scalar),
    Formula(Formula),
}

impl CellContent {
    pub fn number(n: f64) -> Self {
        CellContent::Value(Scalar::Number(n))
    }

    pub fn text(t: impl Into<String>) -> Self {
        CellContent::Value(Scalar::Text(t.into()))
    }

    pub fn formula(text: &str) -> Result<Self, SyntaxError> {
        Ok(CellContent::Formula(Formula::parse(text)?))
    }

    pub fn is_formula(&self) -> bool {
        matches!(self, CellContent::Formula(_))
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, CellContent::Empty)
    }

    pub fn as_formula(&self) -> Option<&Formula> {
        match self {
            CellContent::Formula(f) => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cell {
    pub content: CellContent,
    pub format: CellFormat,
}

impl Cell {
    fn is_vacant(&self) -> bool {
        self.content.is_empty() && self.format.is_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Worksheet {
    name: String,
    /// Keyed by `(row, col)` so iteration is row-major.
    cells: BTreeMap<(u32, u32), Cell>,
}

impl Worksheet {
    fn new(name: String) -> Self {
        Self { name, cells: BTreeMap::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self, col: u32, row: u32) -> Option<&Cell> {
        self.cells.get(&(row, col))
    }

    /// Occupied cells in row-major order as `(col, row, cell)`.
    pub fn cells(&self) -> impl Iterator<Item = (u32, u32, &Cell)> {
        self.cells.iter().map(|(&(row, col), cell)| (col, row, cell))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `(max_row, max_col)` over occupied cells; `(0, 0)` when empty.
    pub fn used_extent(&self) -> (u32, u32) {
        self.cells.keys().fold((0, 0), |(r, c), &(row, col)| (r.max(row), c.max(col)))
    }

    fn put(&mut self, col: u32, row: u32, cell: Cell) {
        if cell.is_vacant() {
            self.cells.remove(&(row, col));
        } else {
            self.cells.insert((row, col), cell);
        }
    }
}

/// What a stable name points at.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NameTarget {
    Cell(CellAddress),
    Range(RangeAddress),
    /// The target was deleted by a structural edit. Keeps the last location
    /// for reporting.
    Dangling(String),
}

impl NameTarget {
    pub fn as_cell(&self) -> Option<&CellAddress> {
        match self {
            NameTarget::Cell(a) => Some(a),
            _ => None,
        }
    }

    pub fn is_dangling(&self) -> bool {
        matches!(self, NameTarget::Dangling(_))
    }
}

impl fmt::Display for NameTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NameTarget::Cell(a) => a.fmt(f),
            NameTarget::Range(r) => r.fmt(f),
            NameTarget::Dangling(last) => write!(f, "<deleted, was {last}>"),
        }
    }
}

impl From<CellAddress> for NameTarget {
    fn from(a: CellAddress) -> Self {
        NameTarget::Cell(a)
    }
}

impl From<RangeAddress> for NameTarget {
    fn from(r: RangeAddress) -> Self {
        NameTarget::Range(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditReceipt {
    pub generation: u64,
}

/// One entry of a batched cell edit. `None` fields are left unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEdit {
    pub addr: CellAddress,
    pub content: Option<CellContent>,
    pub format: Option<CellFormat>,
}

pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workbook {
    sheets: Vec<Worksheet>,
    names: BTreeMap<String, NameTarget>,
    pub(crate) guardian: GuardianSpec,
    generation: u64,
}

impl Workbook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sheets<I, S>(names: I) -> Result<Self, GridError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut wb = Self::new();
        for name in names {
            wb.add_sheet(name)?;
        }
        Ok(wb)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn set_generation(&mut self, generation: u64) {
        self.generation = generation;
    }

    fn bump(&mut self) -> EditReceipt {
        self.generation += 1;
        EditReceipt { generation: self.generation }
    }

    pub fn sheets(&self) -> &[Worksheet] {
        &self.sheets
    }

    pub fn sheet(&self, name: &str) -> Option<&Worksheet> {
        self.sheets.iter().find(|s| s.name == name)
    }

    pub fn sheet_index(&self, name: &str) -> Option<usize> {
        self.sheets.iter().position(|s| s.name == name)
    }

    fn sheet_mut(&mut self, name: &str) -> Result<&mut Worksheet, GridError> {
        self.sheets.iter_mut().find(|s| s.name == name).ok_or_else(|| GridError::UnknownSheet(name.to_string()))
    }

    pub fn add_sheet(&mut self, name: impl Into<String>) -> Result<EditReceipt, GridError> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_control) {
            return Err(GridError::InvalidSheetName(name));
        }
        if self.sheet(&name).is_some() {
            return Err(GridError::DuplicateSheet(name));
        }
        self.sheets.push(Worksheet::new(name));
        Ok(self.bump())
    }

    /// Ordering key for addresses: sheet order, then row, then column.
    /// Unknown sheets sort last.
    pub fn sort_key(&self, addr: &CellAddress) -> (usize, u32, u32) {
        (self.sheet_index(&addr.sheet).unwrap_or(usize::MAX), addr.row, addr.col)
    }

    pub fn cell(&self, addr: &CellAddress) -> Option<&Cell> {
        self.sheet(&addr.sheet)?.get(addr.col, addr.row)
    }

    pub fn content(&self, addr: &CellAddress) -> &CellContent {
        static EMPTY: CellContent = CellContent::Empty;
        self.cell(addr).map_or(&EMPTY, |c| &c.content)
    }

    /// The literal value of a cell, without recalculation. Formula cells
    /// yield `Blank`.
    pub fn literal(&self, addr: &CellAddress) -> CellValue {
        match self.content(addr) {
            CellContent::Value(s) => s.to_value(),
            _ => CellValue::Blank,
        }
    }

    /// Every formula cell in sheet order, then row-major.
    pub fn formulas(&self) -> impl Iterator<Item = (CellAddress, &Formula)> {
        self.sheets.iter().flat_map(|s| {
            s.cells().filter_map(move |(col, row, cell)| {
                cell.content.as_formula().map(|f| (CellAddress::new(s.name.clone(), col, row), f))
            })
        })
    }

    fn check_cell(&self, addr: &CellAddress) -> Result<(), GridError> {
        if self.sheet(&addr.sheet).is_none() {
            return Err(GridError::UnknownSheet(addr.sheet.clone()));
        }
        if !addr.in_bounds() {
            return Err(GridError::OutOfRange(addr.to_string()));
        }
        Ok(())
    }

    fn check_content(content: &CellContent) -> Result<(), GridError> {
        if let CellContent::Value(Scalar::Number(n)) = content {
            if !n.is_finite() {
                return Err(GridError::InvalidValue(format!("non-finite number {n}")));
            }
        }
        Ok(())
    }

    /// Replaces a cell's content, keeping its format.
    pub fn set_cell(&mut self, addr: &CellAddress, content: CellContent) -> Result<EditReceipt, GridError> {
        self.apply_cell_edits(vec![CellEdit { addr: addr.clone(), content: Some(content), format: None }])
    }

    pub fn set_format(&mut self, addr: &CellAddress, format: CellFormat) -> Result<EditReceipt, GridError> {
        self.apply_cell_edits(vec![CellEdit { addr: addr.clone(), content: None, format: Some(format) }])
    }

    /// Applies a batch of cell edits atomically with a single generation
    /// bump. Nothing changes if any entry is invalid.
    pub fn apply_cell_edits(&mut self, edits: Vec<CellEdit>) -> Result<EditReceipt, GridError> {
        for edit in &edits {
            self.check_cell(&edit.addr)?;
            if let Some(content) = &edit.content {
                Self::check_content(content)?;
            }
        }
        for edit in edits {
            let sheet = self.sheet_mut(&edit.addr.sheet)?;
            let mut cell = sheet.get(edit.addr.col, edit.addr.row).cloned().unwrap_or_default();
            if let Some(content) = edit.content {
                cell.content = content;
            }
            if let Some(format) = edit.format {
                cell.format = format;
            }
            sheet.put(edit.addr.col, edit.addr.row, cell);
        }
        Ok(self.bump())
    }

    pub fn bind_name(&mut self, name: &str, target: impl Into<NameTarget>) -> Result<EditReceipt, GridError> {
        self.bind_name_quiet(name, target.into())?;
        Ok(self.bump())
    }

    pub(crate) fn bind_name_quiet(&mut self, name: &str, target: NameTarget) -> Result<(), GridError> {
        if !is_valid_name(name) {
            return Err(GridError::InvalidName(name.to_string()));
        }
        match &target {
            NameTarget::Cell(a) => self.check_cell(a)?,
            NameTarget::Range(r) => {
                if self.sheet(&r.sheet).is_none() {
                    return Err(GridError::UnknownSheet(r.sheet.clone()));
                }
                if r.start_col < 1 || r.start_row < 1 || r.end_col > MAX_COLS || r.end_row > MAX_ROWS {
                    return Err(GridError::OutOfRange(r.to_string()));
                }
            }
            NameTarget::Dangling(_) => {}
        }
        self.names.insert(name.to_string(), target);
        Ok(())
    }

    pub fn resolve_name(&self, name: &str) -> Result<&NameTarget, GridError> {
        self.names.get(name).ok_or_else(|| GridError::UnknownName(name.to_string()))
    }

    pub fn names(&self) -> &BTreeMap<String, NameTarget> {
        &self.names
    }

    /// For each cell bound by at least one name, the alphabetically first
    /// such name.
    pub fn names_by_address(&self) -> HashMap<CellAddress, String> {
        let mut out = HashMap::new();
        for (name, target) in &self.names {
            if let NameTarget::Cell(a) = target {
                out.entry(a.clone()).or_insert_with(|| name.clone());
            }
        }
        out
    }

    pub fn guardian(&self) -> &GuardianSpec {
        &self.guardian
    }

    /// Mutates the guardian section as one edit.
    pub fn update_guardian<T>(&mut self, f: impl FnOnce(&mut GuardianSpec) -> T) -> (T, EditReceipt) {
        let out = f(&mut self.guardian);
        (out, self.bump())
    }

    /// Replaces the whole document content (sheets, names, guardian) with
    /// that of `other`, as a single edit on this document.
    pub fn replace_with(&mut self, other: Workbook) -> EditReceipt {
        self.sheets = other.sheets;
        self.names = other.names;
        self.guardian = other.guardian;
        self.bump()
    }

    pub fn apply_structural_edit(&mut self, edit: &StructuralEdit) -> Result<EditReceipt, GridError> {
        let sheet = self.sheet(&edit.sheet).ok_or_else(|| GridError::UnknownSheet(edit.sheet.clone()))?;
        if edit.at < 1 || edit.at > edit.limit() {
            return Err(GridError::OutOfRange(format!("{edit}: index must be in 1..={}", edit.limit())));
        }
        let (max_row, max_col) = sheet.used_extent();
        let extent = if edit.affects_rows() { max_row } else { max_col };
        if edit.count > 0 {
            if edit.is_insert() {
                if extent >= edit.at && u64::from(extent) + u64::from(edit.count) > u64::from(edit.limit()) {
                    return Err(GridError::OutOfRange(format!("{edit}: pushes cells past the grid limit")));
                }
            } else if u64::from(edit.at) + u64::from(edit.count) - 1 > u64::from(extent) {
                return Err(GridError::OutOfRange(format!("{edit}: beyond used extent {extent}")));
            }
        }
        if edit.count == 0 {
            return Ok(self.bump());
        }

        // Move cells on the edited sheet.
        let sheet = self.sheet_mut(&edit.sheet)?;
        let old = std::mem::take(&mut sheet.cells);
        for ((row, col), cell) in old {
            let idx = if edit.affects_rows() { row } else { col };
            if let Shifted::To(v) = edit.shift_index(idx) {
                let key = if edit.affects_rows() { (v, col) } else { (row, v) };
                sheet.cells.insert(key, cell);
            }
        }

        // Rewrite formulas everywhere.
        for sheet in &mut self.sheets {
            let host = CellAddress::new(sheet.name.clone(), 1, 1);
            for cell in sheet.cells.values_mut() {
                if let CellContent::Formula(f) = &cell.content {
                    let (ast, _) = formula::adjust_references(f.ast(), edit, &host);
                    if &ast != f.ast() {
                        cell.content = CellContent::Formula(Formula::from_ast(ast));
                    }
                }
            }
        }

        for target in self.names.values_mut() {
            let moved = match &*target {
                NameTarget::Cell(a) => edit.relocate(a).map(NameTarget::Cell),
                NameTarget::Range(r) => edit.relocate_range(r).map(NameTarget::Range),
                NameTarget::Dangling(_) => continue,
            };
            *target = moved.unwrap_or_else(|| NameTarget::Dangling(target.to_string()));
        }

        self.guardian.apply_structural_edit(edit);
        Ok(self.bump())
    }

    pub fn snapshot(&self) -> FrozenWorkbook {
        FrozenWorkbook(Arc::new(self.clone()))
    }
}

/// An immutable copy of a workbook, tagged with the generation it was taken
/// at. Cheap to clone and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenWorkbook(Arc<Workbook>);

impl FrozenWorkbook {
    pub fn workbook(&self) -> &Workbook {
        &self.0
    }

    pub(crate) fn from_arc(wb: Arc<Workbook>) -> Self {
        Self(wb)
    }
}

impl Deref for FrozenWorkbook {
    type Target = Workbook;

    fn deref(&self) -> &Workbook {
        &self.0
    }
}
