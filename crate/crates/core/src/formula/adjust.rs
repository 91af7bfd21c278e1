use super::ast::{CellRef, Coord, Expr, RangeRef};
use crate::address::CellAddress;
use crate::edit::{Shifted, StructuralEdit};

/// Rewrites every reference affected by `edit` as seen from a formula living
/// at `host`. Returns the new tree and the host's new address (`None` when
/// the host cell itself was deleted).
///
/// References into a deleted span become [`Expr::RefError`]; ranges that
/// lose only part of their span shrink.
pub fn adjust_references(expr: &Expr, edit: &StructuralEdit, host: &CellAddress) -> (Expr, Option<CellAddress>) {
    (adjust(expr, edit, &host.sheet), edit.relocate(host))
}

fn targets(sheet: &Option<String>, host_sheet: &str, edit: &StructuralEdit) -> bool {
    sheet.as_deref().unwrap_or(host_sheet) == edit.sheet
}

fn shift_coord(c: Coord, edit: &StructuralEdit) -> Option<Coord> {
    let idx = if edit.affects_rows() { c.row } else { c.col };
    match edit.shift_index(idx) {
        Shifted::To(v) => Some(if edit.affects_rows() { Coord { row: v, ..c } } else { Coord { col: v, ..c } }),
        Shifted::Deleted | Shifted::Overflow => None,
    }
}

fn adjust_cell(r: &CellRef, edit: &StructuralEdit, host_sheet: &str) -> Expr {
    if !targets(&r.sheet, host_sheet, edit) {
        return Expr::Ref(r.clone());
    }
    match shift_coord(r.at, edit) {
        Some(at) => Expr::Ref(CellRef { sheet: r.sheet.clone(), at }),
        None => Expr::RefError,
    }
}

fn adjust_range(r: &RangeRef, edit: &StructuralEdit, host_sheet: &str) -> Expr {
    if !targets(&r.sheet, host_sheet, edit) {
        return Expr::Range(r.clone());
    }
    let (s, e) = if edit.affects_rows() { (r.start.row, r.end.row) } else { (r.start.col, r.end.col) };
    match edit.shift_span(s, e) {
        Some((s, e)) => {
            let mut out = r.clone();
            if edit.affects_rows() {
                out.start.row = s;
                out.end.row = e;
            } else {
                out.start.col = s;
                out.end.col = e;
            }
            Expr::Range(out)
        }
        None => Expr::RefError,
    }
}

fn adjust(expr: &Expr, edit: &StructuralEdit, host_sheet: &str) -> Expr {
    match expr {
        Expr::Ref(r) => adjust_cell(r, edit, host_sheet),
        Expr::Range(r) => adjust_range(r, edit, host_sheet),
        Expr::Unary { op, operand } => Expr::unary(*op, adjust(operand, edit, host_sheet)),
        Expr::Binary { op, lhs, rhs } => {
            Expr::binary(*op, adjust(lhs, edit, host_sheet), adjust(rhs, edit, host_sheet))
        }
        Expr::Call { func, args } => Expr::call(*func, args.iter().map(|a| adjust(a, edit, host_sheet)).collect()),
        leaf => leaf.clone(),
    }
}
