//! Formula language: parsing, canonical printing, reference extraction,
//! evaluation and rewriting under structural edits.

mod adjust;
mod ast;
mod eval;
mod parser;
mod print;
mod refs;
mod value;

pub use adjust::adjust_references;
pub use ast::{BinaryOp, CellRef, Coord, Expr, Formula, Function, RangeRef, UnaryOp};
pub use eval::{coerce_number, compare_values, evaluate, CellSource};
pub use parser::{parse, SyntaxError};
pub use print::{print, print_relative};
pub use refs::{reference_counts, reference_nodes, references, RefNode};
pub use value::{display_number, CellValue, ErrorKind};
