use std::fmt::Write;

use super::ast::{CellRef, Coord, Expr, RangeRef, UnaryOp};
use super::value::{bool_text, display_number};
use crate::address::{column_letters, write_sheet_prefix, CellAddress};

const UNARY_PRECEDENCE: u8 = 6;
const ATOM_PRECEDENCE: u8 = 7;

/// Canonical A1 text, including the leading `=`.
pub fn print(expr: &Expr) -> String {
    let mut out = String::from("=");
    write_expr(&mut out, expr, &RefStyle::A1);
    out
}

/// Relative (R1C1-style) text as seen from `host`. Two cells whose formulas
/// were produced by copying one another print identically.
pub fn print_relative(expr: &Expr, host: &CellAddress) -> String {
    let mut out = String::from("=");
    write_expr(&mut out, expr, &RefStyle::Relative(host));
    out
}

enum RefStyle<'a> {
    A1,
    Relative(&'a CellAddress),
}

fn precedence(expr: &Expr) -> u8 {
    match expr {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { .. } => UNARY_PRECEDENCE,
        _ => ATOM_PRECEDENCE,
    }
}

fn write_child(out: &mut String, child: &Expr, style: &RefStyle, needs_parens: bool) {
    if needs_parens {
        out.push('(');
        write_expr(out, child, style);
        out.push(')');
    } else {
        write_expr(out, child, style);
    }
}

fn write_expr(out: &mut String, expr: &Expr, style: &RefStyle) {
    match expr {
        Expr::Number(n) => out.push_str(&display_number(*n)),
        Expr::Text(t) => {
            out.push('"');
            out.push_str(&t.replace('"', "\"\""));
            out.push('"');
        }
        Expr::Bool(b) => out.push_str(bool_text(*b)),
        Expr::Ref(r) => write_cell_ref(out, r, style),
        Expr::Range(r) => write_range_ref(out, r, style),
        Expr::RefError => out.push_str("#REF!"),
        Expr::Unary { op, operand } => {
            out.push(match op {
                UnaryOp::Neg => '-',
                UnaryOp::Plus => '+',
            });
            write_child(out, operand, style, precedence(operand) < UNARY_PRECEDENCE);
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            write_child(out, lhs, style, precedence(lhs) < p);
            out.push_str(op.symbol());
            write_child(out, rhs, style, precedence(rhs) <= p);
        }
        Expr::Call { func, args } => {
            out.push_str(func.name());
            out.push('(');
            for (i, arg) in args.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_expr(out, arg, style);
            }
            out.push(')');
        }
    }
}

fn write_sheet(out: &mut String, sheet: &Option<String>) {
    if let Some(sheet) = sheet {
        write_sheet_prefix(out, sheet).expect("write to String");
    }
}

fn write_coord(out: &mut String, c: &Coord, style: &RefStyle) {
    match style {
        RefStyle::A1 => {
            if c.col_abs {
                out.push('$');
            }
            out.push_str(&column_letters(c.col));
            if c.row_abs {
                out.push('$');
            }
            write!(out, "{}", c.row).expect("write to String");
        }
        RefStyle::Relative(host) => {
            if c.row_abs {
                write!(out, "R{}", c.row).expect("write to String");
            } else {
                write!(out, "R[{}]", i64::from(c.row) - i64::from(host.row)).expect("write to String");
            }
            if c.col_abs {
                write!(out, "C{}", c.col).expect("write to String");
            } else {
                write!(out, "C[{}]", i64::from(c.col) - i64::from(host.col)).expect("write to String");
            }
        }
    }
}

fn write_cell_ref(out: &mut String, r: &CellRef, style: &RefStyle) {
    write_sheet(out, &r.sheet);
    write_coord(out, &r.at, style);
}

fn write_range_ref(out: &mut String, r: &RangeRef, style: &RefStyle) {
    write_sheet(out, &r.sheet);
    write_coord(out, &r.start, style);
    out.push(':');
    write_coord(out, &r.end, style);
}
