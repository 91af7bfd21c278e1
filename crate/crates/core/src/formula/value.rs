use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ErrorKind {
    Div0,
    Ref,
    Na,
    Value,
    Name,
    /// Circular dependency between formula cells.
    Cycle,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Div0 => "#DIV/0!",
            ErrorKind::Ref => "#REF!",
            ErrorKind::Na => "#N/A",
            ErrorKind::Value => "#VALUE!",
            ErrorKind::Name => "#NAME?",
            ErrorKind::Cycle => "#CYCLE!",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The computed value of a cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum CellValue {
    Number(f64),
    Text(String),
    Bool(bool),
    #[default]
    Blank,
    Error(ErrorKind),
}

impl CellValue {
    pub fn is_error(&self) -> bool {
        matches!(self, CellValue::Error(_))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    /// Text as the cell would display it.
    pub fn display_text(&self) -> String {
        match self {
            CellValue::Number(n) => display_number(*n),
            CellValue::Text(t) => t.clone(),
            CellValue::Bool(b) => bool_text(*b).to_string(),
            CellValue::Blank => String::new(),
            CellValue::Error(e) => e.as_str().to_string(),
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Text(t) => write!(f, "{t:?}"),
            CellValue::Blank => f.write_str("<blank>"),
            other => f.write_str(&other.display_text()),
        }
    }
}

pub(crate) fn bool_text(b: bool) -> &'static str {
    if b {
        "TRUE"
    } else {
        "FALSE"
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn display_number(n: f64) -> String {
    if n == 0.0 {
        // Drop the sign of negative zero.
        return "0".to_string();
    }
    format!("{n}")
}
