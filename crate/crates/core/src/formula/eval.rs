//! Formula evaluation.
//!
//! Errors never escape as Rust errors: every failure is an
//! [`CellValue::Error`] that propagates through operators and functions.

use std::cmp::Ordering;

use super::ast::{BinaryOp, Expr, Function, UnaryOp};
use super::value::{CellValue, ErrorKind};
use crate::address::{CellAddress, RangeAddress};

/// Supplies the current value of any cell. Must be total: empty cells are
/// [`CellValue::Blank`], unknown sheets `#REF!`.
pub trait CellSource {
    fn value(&self, addr: &CellAddress) -> CellValue;
}

impl<F> CellSource for F
where
    F: Fn(&CellAddress) -> CellValue,
{
    fn value(&self, addr: &CellAddress) -> CellValue {
        self(addr)
    }
}

/// Evaluates `expr` for a cell on `host_sheet`.
pub fn evaluate(expr: &Expr, host_sheet: &str, source: &dyn CellSource) -> CellValue {
    Evaluator { host_sheet, source }.scalar(expr)
}

type Num = Result<f64, ErrorKind>;

enum Arg {
    Scalar(CellValue),
    /// A reference argument (single cell or range).
    Area(RangeAddress),
}

struct Evaluator<'a> {
    host_sheet: &'a str,
    source: &'a dyn CellSource,
}

fn to_number(v: &CellValue) -> Num {
    match v {
        CellValue::Number(n) => Ok(*n),
        CellValue::Blank => Ok(0.0),
        CellValue::Bool(b) => Ok(if *b { 1.0 } else { 0.0 }),
        CellValue::Text(t) => match t.trim().parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(n),
            _ => Err(ErrorKind::Value),
        },
        CellValue::Error(e) => Err(*e),
    }
}

fn to_text(v: &CellValue) -> Result<String, ErrorKind> {
    match v {
        CellValue::Error(e) => Err(*e),
        other => Ok(other.display_text()),
    }
}

fn to_bool(v: &CellValue) -> Result<bool, ErrorKind> {
    match v {
        CellValue::Bool(b) => Ok(*b),
        CellValue::Number(n) => Ok(*n != 0.0),
        CellValue::Blank => Ok(false),
        CellValue::Text(t) if t.eq_ignore_ascii_case("TRUE") => Ok(true),
        CellValue::Text(t) if t.eq_ignore_ascii_case("FALSE") => Ok(false),
        CellValue::Text(_) => Err(ErrorKind::Value),
        CellValue::Error(e) => Err(*e),
    }
}

fn finite(n: f64) -> CellValue {
    if n.is_finite() {
        CellValue::Number(n)
    } else {
        CellValue::Error(ErrorKind::Value)
    }
}

fn type_rank(v: &CellValue) -> u8 {
    match v {
        CellValue::Number(_) => 0,
        CellValue::Text(_) => 1,
        CellValue::Bool(_) => 2,
        _ => 3,
    }
}

/// Spreadsheet ordering: numbers < text < booleans; text compares
/// case-insensitively; blank takes the default of the other side's type.
pub fn compare_values(a: &CellValue, b: &CellValue) -> Ordering {
    fn blank_like(other: &CellValue) -> CellValue {
        match other {
            CellValue::Text(_) => CellValue::Text(String::new()),
            CellValue::Bool(_) => CellValue::Bool(false),
            _ => CellValue::Number(0.0),
        }
    }
    match (a, b) {
        (CellValue::Blank, CellValue::Blank) => Ordering::Equal,
        (CellValue::Blank, other) => compare_values(&blank_like(other), other),
        (other, CellValue::Blank) => compare_values(other, &blank_like(other)),
        (CellValue::Number(x), CellValue::Number(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (CellValue::Text(x), CellValue::Text(y)) => x.to_lowercase().cmp(&y.to_lowercase()),
        (CellValue::Bool(x), CellValue::Bool(y)) => x.cmp(y),
        _ => type_rank(a).cmp(&type_rank(b)),
    }
}

impl Evaluator<'_> {
    fn scalar(&self, expr: &Expr) -> CellValue {
        match expr {
            Expr::Number(n) => CellValue::Number(*n),
            Expr::Text(t) => CellValue::Text(t.clone()),
            Expr::Bool(b) => CellValue::Bool(*b),
            Expr::Ref(r) => self.source.value(&r.resolve(self.host_sheet)),
            // No implicit intersection.
            Expr::Range(_) => CellValue::Error(ErrorKind::Value),
            Expr::RefError => CellValue::Error(ErrorKind::Ref),
            Expr::Unary { op, operand } => {
                let v = self.scalar(operand);
                match to_number(&v) {
                    Ok(n) => match op {
                        UnaryOp::Neg => CellValue::Number(-n),
                        UnaryOp::Plus => CellValue::Number(n),
                    },
                    Err(e) => CellValue::Error(e),
                }
            }
            Expr::Binary { op, lhs, rhs } => self.binary(*op, lhs, rhs),
            Expr::Call { func, args } => self.call(*func, args),
        }
    }

    fn binary(&self, op: BinaryOp, lhs: &Expr, rhs: &Expr) -> CellValue {
        let a = self.scalar(lhs);
        let b = self.scalar(rhs);
        if let CellValue::Error(e) = a {
            return CellValue::Error(e);
        }
        if let CellValue::Error(e) = b {
            return CellValue::Error(e);
        }
        match op {
            BinaryOp::Concat => match (to_text(&a), to_text(&b)) {
                (Ok(x), Ok(y)) => CellValue::Text(x + &y),
                (Err(e), _) | (_, Err(e)) => CellValue::Error(e),
            },
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                let ord = compare_values(&a, &b);
                CellValue::Bool(match op {
                    BinaryOp::Eq => ord == Ordering::Equal,
                    BinaryOp::Ne => ord != Ordering::Equal,
                    BinaryOp::Lt => ord == Ordering::Less,
                    BinaryOp::Le => ord != Ordering::Greater,
                    BinaryOp::Gt => ord == Ordering::Greater,
                    _ => ord != Ordering::Less,
                })
            }
            _ => {
                let (x, y) = match (to_number(&a), to_number(&b)) {
                    (Ok(x), Ok(y)) => (x, y),
                    (Err(e), _) | (_, Err(e)) => return CellValue::Error(e),
                };
                match op {
                    BinaryOp::Add => finite(x + y),
                    BinaryOp::Sub => finite(x - y),
                    BinaryOp::Mul => finite(x * y),
                    BinaryOp::Div if y == 0.0 => CellValue::Error(ErrorKind::Div0),
                    BinaryOp::Div => finite(x / y),
                    BinaryOp::Pow if x == 0.0 && y < 0.0 => CellValue::Error(ErrorKind::Div0),
                    BinaryOp::Pow => finite(x.powf(y)),
                    _ => unreachable!("comparison and concat handled above"),
                }
            }
        }
    }

    fn arg(&self, expr: &Expr) -> Arg {
        match expr {
            Expr::Ref(r) => {
                let a = r.resolve(self.host_sheet);
                Arg::Area(RangeAddress::new(a.sheet, a.col, a.row, a.col, a.row))
            }
            Expr::Range(r) => Arg::Area(r.resolve(self.host_sheet)),
            other => Arg::Scalar(self.scalar(other)),
        }
    }

    /// Numbers for SUM/AVERAGE/MIN/MAX. Inside references only numbers
    /// count and errors propagate; scalar arguments must be numeric (or
    /// boolean), text is `#VALUE!`.
    fn numbers(&self, args: &[Expr]) -> Result<Vec<f64>, ErrorKind> {
        let mut out = Vec::new();
        for expr in args {
            match self.arg(expr) {
                Arg::Area(range) => {
                    for addr in range.cells() {
                        match self.source.value(&addr) {
                            CellValue::Number(n) => out.push(n),
                            CellValue::Error(e) => return Err(e),
                            _ => {}
                        }
                    }
                }
                Arg::Scalar(v) => match v {
                    CellValue::Number(n) => out.push(n),
                    CellValue::Bool(b) => out.push(if b { 1.0 } else { 0.0 }),
                    CellValue::Blank => {}
                    CellValue::Text(_) => return Err(ErrorKind::Value),
                    CellValue::Error(e) => return Err(e),
                },
            }
        }
        Ok(out)
    }

    fn call(&self, func: Function, args: &[Expr]) -> CellValue {
        let result = match func {
            Function::Sum => self.numbers(args).map(|ns| finite(ns.iter().sum())),
            Function::Average => self.numbers(args).map(|ns| {
                if ns.is_empty() {
                    CellValue::Error(ErrorKind::Div0)
                } else {
                    finite(ns.iter().sum::<f64>() / ns.len() as f64)
                }
            }),
            Function::Min => {
                self.numbers(args).map(|ns| CellValue::Number(ns.into_iter().reduce(f64::min).unwrap_or(0.0)))
            }
            Function::Max => {
                self.numbers(args).map(|ns| CellValue::Number(ns.into_iter().reduce(f64::max).unwrap_or(0.0)))
            }
            Function::Count => Ok(CellValue::Number(self.count(args) as f64)),
            Function::If => self.if_(args),
            Function::Round => self.round(args),
            Function::Abs => to_number(&self.scalar(&args[0])).map(|n| CellValue::Number(n.abs())),
            Function::Vlookup => self.vlookup(args),
        };
        result.unwrap_or_else(CellValue::Error)
    }

    fn count(&self, args: &[Expr]) -> usize {
        args.iter()
            .map(|expr| match self.arg(expr) {
                Arg::Area(range) => {
                    range.cells().filter(|a| matches!(self.source.value(a), CellValue::Number(_))).count()
                }
                Arg::Scalar(CellValue::Number(_)) => 1,
                Arg::Scalar(_) => 0,
            })
            .sum()
    }

    fn if_(&self, args: &[Expr]) -> Result<CellValue, ErrorKind> {
        let cond = to_bool(&self.scalar(&args[0]))?;
        if cond {
            Ok(self.scalar(&args[1]))
        } else if let Some(otherwise) = args.get(2) {
            Ok(self.scalar(otherwise))
        } else {
            Ok(CellValue::Bool(false))
        }
    }

    fn round(&self, args: &[Expr]) -> Result<CellValue, ErrorKind> {
        let x = to_number(&self.scalar(&args[0]))?;
        let digits = to_number(&self.scalar(&args[1]))?.trunc();
        if digits.abs() > 300.0 {
            return Err(ErrorKind::Value);
        }
        let scale = 10f64.powi(digits as i32);
        // f64::round rounds half away from zero.
        Ok(finite((x * scale).round() / scale))
    }

    fn vlookup(&self, args: &[Expr]) -> Result<CellValue, ErrorKind> {
        let key = self.scalar(&args[0]);
        if let CellValue::Error(e) = key {
            return Err(e);
        }
        let table = match self.arg(&args[1]) {
            Arg::Area(r) => r,
            Arg::Scalar(CellValue::Error(e)) => return Err(e),
            Arg::Scalar(_) => return Err(ErrorKind::Value),
        };
        let index = to_number(&self.scalar(&args[2]))?.trunc();
        let exact = match args.get(3) {
            Some(flag) => !to_bool(&self.scalar(flag))?,
            None => false,
        };
        if index < 1.0 || index > f64::from(table.width()) {
            return Err(ErrorKind::Ref);
        }
        let col = table.start_col + index as u32 - 1;
        let mut hit = None;
        for row in table.start_row..=table.end_row {
            let first = self.source.value(&CellAddress::new(table.sheet.clone(), table.start_col, row));
            if let CellValue::Error(e) = first {
                return Err(e);
            }
            if exact {
                if first != CellValue::Blank
                    && type_rank(&first) == type_rank(&key)
                    && compare_values(&first, &key) == Ordering::Equal
                {
                    hit = Some(row);
                    break;
                }
            } else if type_rank(&first) == type_rank(&key) {
                // Ascending order assumed: stop at the first larger key.
                if compare_values(&first, &key) == Ordering::Greater {
                    break;
                }
                hit = Some(row);
            }
        }
        let row = hit.ok_or(ErrorKind::Na)?;
        Ok(match self.source.value(&CellAddress::new(table.sheet, col, row)) {
            CellValue::Blank => CellValue::Number(0.0),
            v => v,
        })
    }
}

/// Numeric coercion as used by arithmetic operators.
pub fn coerce_number(v: &CellValue) -> Option<f64> {
    to_number(v).ok()
}
