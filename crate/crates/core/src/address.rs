//! A1-style cell addressing.
//!
//! Columns and rows are 1-based. The textual form of an address always
//! carries the sheet prefix (`Calculation!K33`); sheet names that are not
//! plain identifiers are quoted (`'Price list'!B2`), with embedded quotes
//! doubled.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest addressable column (`XFD`).
pub const MAX_COLS: u32 = 16_384;
/// Largest addressable row.
pub const MAX_ROWS: u32 = 1_048_576;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid address {text:?}: {reason}")]
pub struct AddressError {
    pub text: String,
    pub reason: &'static str,
}

impl AddressError {
    fn new(text: &str, reason: &'static str) -> Self {
        Self { text: text.to_string(), reason }
    }
}

/// Converts a 1-based column index to its letter form (`1 -> A`, `27 -> AA`).
pub fn column_letters(mut col: u32) -> String {
    let mut out = Vec::new();
    while col > 0 {
        let rem = (col - 1) % 26;
        out.push(b'A' + rem as u8);
        col = (col - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Parses column letters (case-insensitive). Returns `None` on empty input,
/// non-letters or overflow past [`MAX_COLS`].
pub fn column_index(letters: &str) -> Option<u32> {
    if letters.is_empty() || letters.len() > 3 {
        return None;
    }
    let mut col: u32 = 0;
    for b in letters.bytes() {
        if !b.is_ascii_alphabetic() {
            return None;
        }
        col = col * 26 + u32::from(b.to_ascii_uppercase() - b'A' + 1);
    }
    (col <= MAX_COLS).then_some(col)
}

pub(crate) fn is_plain_sheet_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return false;
    }
    // Names that look like a cell (`AB12`) would be ambiguous unquoted.
    split_cell(name).is_none() && !name.eq_ignore_ascii_case("TRUE") && !name.eq_ignore_ascii_case("FALSE")
}

/// Writes a sheet prefix including the trailing `!`.
pub(crate) fn write_sheet_prefix(f: &mut impl fmt::Write, sheet: &str) -> fmt::Result {
    if is_plain_sheet_name(sheet) {
        write!(f, "{sheet}!")
    } else {
        write!(f, "'{}'!", sheet.replace('\'', "''"))
    }
}

/// Splits a sheet-qualified reference into `(sheet, rest)`.
fn split_sheet(text: &str) -> Result<(String, &str), AddressError> {
    if let Some(stripped) = text.strip_prefix('\'') {
        let mut name = String::new();
        let mut chars = stripped.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if c == '\'' {
                if matches!(chars.peek(), Some((_, '\''))) {
                    chars.next();
                    name.push('\'');
                    continue;
                }
                let rest = &stripped[i + 1..];
                let rest = rest
                    .strip_prefix('!')
                    .ok_or_else(|| AddressError::new(text, "expected '!' after quoted sheet name"))?;
                if name.is_empty() {
                    return Err(AddressError::new(text, "empty sheet name"));
                }
                return Ok((name, rest));
            }
            name.push(c);
        }
        Err(AddressError::new(text, "unterminated sheet name"))
    } else {
        let (sheet, rest) = text.split_once('!').ok_or_else(|| AddressError::new(text, "missing sheet prefix"))?;
        if sheet.is_empty() {
            return Err(AddressError::new(text, "empty sheet name"));
        }
        Ok((sheet.to_string(), rest))
    }
}

/// Parses `A1` / `$A$1` into `(col, row)`, ignoring `$` markers.
pub(crate) fn split_cell(text: &str) -> Option<(u32, u32)> {
    let text = text.strip_prefix('$').unwrap_or(text);
    let letters_end = text.find(|c: char| !c.is_ascii_alphabetic())?;
    let (letters, rest) = text.split_at(letters_end);
    let rest = rest.strip_prefix('$').unwrap_or(rest);
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || rest.starts_with('0') {
        return None;
    }
    let col = column_index(letters)?;
    let row: u32 = rest.parse().ok()?;
    (row <= MAX_ROWS).then_some((col, row))
}

/// A single cell on a named sheet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellAddress {
    pub sheet: String,
    pub row: u32,
    pub col: u32,
}

impl CellAddress {
    pub fn new(sheet: impl Into<String>, col: u32, row: u32) -> Self {
        Self { sheet: sheet.into(), row, col }
    }

    /// The address without its sheet prefix, e.g. `K33`.
    pub fn local(&self) -> String {
        format!("{}{}", column_letters(self.col), self.row)
    }

    pub fn in_bounds(&self) -> bool {
        (1..=MAX_COLS).contains(&self.col) && (1..=MAX_ROWS).contains(&self.row)
    }
}

impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_sheet_prefix(f, &self.sheet)?;
        write!(f, "{}{}", column_letters(self.col), self.row)
    }
}

impl FromStr for CellAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (sheet, rest) = split_sheet(s)?;
        let (col, row) = split_cell(rest).ok_or_else(|| AddressError::new(s, "malformed cell"))?;
        if col == 0 || row == 0 {
            return Err(AddressError::new(s, "column and row are 1-based"));
        }
        Ok(Self { sheet, row, col })
    }
}

/// A rectangular block of cells on one sheet, normalized so that the start
/// corner is top-left.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RangeAddress {
    pub sheet: String,
    pub start_col: u32,
    pub start_row: u32,
    pub end_col: u32,
    pub end_row: u32,
}

impl RangeAddress {
    pub fn new(sheet: impl Into<String>, c1: u32, r1: u32, c2: u32, r2: u32) -> Self {
        Self {
            sheet: sheet.into(),
            start_col: c1.min(c2),
            start_row: r1.min(r2),
            end_col: c1.max(c2),
            end_row: r1.max(r2),
        }
    }

    pub fn contains(&self, addr: &CellAddress) -> bool {
        addr.sheet == self.sheet
            && (self.start_col..=self.end_col).contains(&addr.col)
            && (self.start_row..=self.end_row).contains(&addr.row)
    }

    pub fn width(&self) -> u32 {
        self.end_col - self.start_col + 1
    }

    pub fn height(&self) -> u32 {
        self.end_row - self.start_row + 1
    }

    /// Row-major iteration over every covered address.
    pub fn cells(&self) -> impl Iterator<Item = CellAddress> + '_ {
        (self.start_row..=self.end_row).flat_map(move |row| {
            (self.start_col..=self.end_col).map(move |col| CellAddress::new(self.sheet.clone(), col, row))
        })
    }
}

impl fmt::Display for RangeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_sheet_prefix(f, &self.sheet)?;
        write!(
            f,
            "{}{}:{}{}",
            column_letters(self.start_col),
            self.start_row,
            column_letters(self.end_col),
            self.end_row
        )
    }
}

impl FromStr for RangeAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (sheet, rest) = split_sheet(s)?;
        let (a, b) = rest.split_once(':').ok_or_else(|| AddressError::new(s, "missing ':'"))?;
        let (c1, r1) = split_cell(a).ok_or_else(|| AddressError::new(s, "malformed range start"))?;
        let (c2, r2) = split_cell(b).ok_or_else(|| AddressError::new(s, "malformed range end"))?;
        Ok(Self::new(sheet, c1, r1, c2, r2))
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(CellAddress);
string_serde!(RangeAddress);
