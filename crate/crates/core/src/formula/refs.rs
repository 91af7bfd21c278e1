use std::collections::BTreeMap;

use super::ast::{CellRef, Expr, RangeRef};
use crate::address::CellAddress;

/// A reference node inside a formula.
#[derive(Debug, Clone, Copy)]
pub enum RefNode<'a> {
    Cell(&'a CellRef),
    Range(&'a RangeRef),
}

/// Every reference node in source order.
pub fn reference_nodes(expr: &Expr) -> Vec<RefNode<'_>> {
    let mut out = Vec::new();
    expr.walk(&mut |node| match node {
        Expr::Ref(r) => out.push(RefNode::Cell(r)),
        Expr::Range(r) => out.push(RefNode::Range(r)),
        _ => {}
    });
    out
}

/// The referenced cells as a multiset in source order: ranges expand
/// row-major and repeated references appear repeatedly. Unqualified
/// references resolve against `host_sheet`.
pub fn references(expr: &Expr, host_sheet: &str) -> Vec<CellAddress> {
    let mut out = Vec::new();
    for node in reference_nodes(expr) {
        match node {
            RefNode::Cell(r) => out.push(r.resolve(host_sheet)),
            RefNode::Range(r) => out.extend(r.resolve(host_sheet).cells()),
        }
    }
    out
}

/// [`references`] folded into address counts.
pub fn reference_counts(expr: &Expr, host_sheet: &str) -> BTreeMap<CellAddress, usize> {
    let mut counts = BTreeMap::new();
    for addr in references(expr, host_sheet) {
        *counts.entry(addr).or_insert(0) += 1;
    }
    counts
}
