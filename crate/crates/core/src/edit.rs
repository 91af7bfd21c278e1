//! Row/column insertion and deletion, and how they move coordinates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::address::{CellAddress, RangeAddress, MAX_COLS, MAX_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EditKind {
    InsertRows,
    DeleteRows,
    InsertCols,
    DeleteCols,
}

/// A structural edit on one sheet: `count` rows or columns inserted before,
/// or deleted starting at, the 1-based index `at`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuralEdit {
    pub kind: EditKind,
    pub sheet: String,
    pub at: u32,
    pub count: u32,
}

impl fmt::Display for StructuralEdit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {}@{} x{}", self.kind, self.sheet, self.at, self.count)
    }
}

/// Outcome of moving a single index through an edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shifted {
    To(u32),
    Deleted,
    /// Pushed past the grid limit by an insertion.
    Overflow,
}

impl StructuralEdit {
    pub fn new(kind: EditKind, sheet: impl Into<String>, at: u32, count: u32) -> Self {
        Self { kind, sheet: sheet.into(), at, count }
    }

    pub fn affects_rows(&self) -> bool {
        matches!(self.kind, EditKind::InsertRows | EditKind::DeleteRows)
    }

    pub fn is_insert(&self) -> bool {
        matches!(self.kind, EditKind::InsertRows | EditKind::InsertCols)
    }

    pub fn limit(&self) -> u32 {
        if self.affects_rows() {
            MAX_ROWS
        } else {
            MAX_COLS
        }
    }

    /// Moves one index along the edited axis.
    pub fn shift_index(&self, idx: u32) -> Shifted {
        if idx < self.at {
            return Shifted::To(idx);
        }
        if self.is_insert() {
            let moved = u64::from(idx) + u64::from(self.count);
            if moved > u64::from(self.limit()) {
                Shifted::Overflow
            } else {
                Shifted::To(moved as u32)
            }
        } else if u64::from(idx) < u64::from(self.at) + u64::from(self.count) {
            Shifted::Deleted
        } else {
            Shifted::To(idx - self.count)
        }
    }

    /// Moves an inclusive span `[start, end]` along the edited axis. Spans
    /// that are partially deleted shrink; fully deleted spans yield `None`.
    pub fn shift_span(&self, start: u32, end: u32) -> Option<(u32, u32)> {
        if self.is_insert() {
            let s = match self.shift_index(start) {
                Shifted::To(v) => v,
                _ => return None,
            };
            let e = match self.shift_index(end) {
                Shifted::To(v) => v,
                Shifted::Overflow => self.limit(),
                Shifted::Deleted => unreachable!(),
            };
            return Some((s, e));
        }
        let del_end = u64::from(self.at) + u64::from(self.count); // exclusive
        if u64::from(start) >= u64::from(self.at) && u64::from(end) < del_end {
            return None;
        }
        let s = if start < self.at {
            start
        } else if u64::from(start) < del_end {
            self.at
        } else {
            start - self.count
        };
        let e = if end < self.at {
            end
        } else if u64::from(end) >= del_end {
            end - self.count
        } else {
            self.at - 1
        };
        Some((s, e))
    }

    /// Moves a cell address, or returns `None` when the cell no longer
    /// exists. Addresses on other sheets are untouched.
    pub fn relocate(&self, addr: &CellAddress) -> Option<CellAddress> {
        if addr.sheet != self.sheet {
            return Some(addr.clone());
        }
        let idx = if self.affects_rows() { addr.row } else { addr.col };
        match self.shift_index(idx) {
            Shifted::To(v) => {
                let mut out = addr.clone();
                if self.affects_rows() {
                    out.row = v;
                } else {
                    out.col = v;
                }
                Some(out)
            }
            _ => None,
        }
    }

    pub fn relocate_range(&self, range: &RangeAddress) -> Option<RangeAddress> {
        if range.sheet != self.sheet {
            return Some(range.clone());
        }
        let mut out = range.clone();
        if self.affects_rows() {
            let (s, e) = self.shift_span(range.start_row, range.end_row)?;
            out.start_row = s;
            out.end_row = e;
        } else {
            let (s, e) = self.shift_span(range.start_col, range.end_col)?;
            out.start_col = s;
            out.end_col = e;
        }
        Some(out)
    }
}
