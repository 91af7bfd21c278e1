use std::fmt;
use std::str::FromStr;

use crate::address::{CellAddress, RangeAddress};

/// One corner of a reference, with its `$` anchoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coord {
    pub col: u32,
    pub row: u32,
    pub col_abs: bool,
    pub row_abs: bool,
}

impl Coord {
    pub fn relative(col: u32, row: u32) -> Self {
        Self { col, row, col_abs: false, row_abs: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub sheet: Option<String>,
    pub at: Coord,
}

impl CellRef {
    pub fn resolve(&self, host_sheet: &str) -> CellAddress {
        CellAddress::new(self.sheet.as_deref().unwrap_or(host_sheet), self.at.col, self.at.row)
    }
}

/// A rectangular reference. Constructed through [`RangeRef::new`] the start
/// corner is always top-left.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeRef {
    pub sheet: Option<String>,
    pub start: Coord,
    pub end: Coord,
}

impl RangeRef {
    pub fn new(sheet: Option<String>, a: Coord, b: Coord) -> Self {
        let (c1, c2) = if a.col <= b.col {
            ((a.col, a.col_abs), (b.col, b.col_abs))
        } else {
            ((b.col, b.col_abs), (a.col, a.col_abs))
        };
        let (r1, r2) = if a.row <= b.row {
            ((a.row, a.row_abs), (b.row, b.row_abs))
        } else {
            ((b.row, b.row_abs), (a.row, a.row_abs))
        };
        Self {
            sheet,
            start: Coord { col: c1.0, col_abs: c1.1, row: r1.0, row_abs: r1.1 },
            end: Coord { col: c2.0, col_abs: c2.1, row: r2.0, row_abs: r2.1 },
        }
    }

    pub fn resolve(&self, host_sheet: &str) -> RangeAddress {
        RangeAddress::new(
            self.sheet.as_deref().unwrap_or(host_sheet),
            self.start.col,
            self.start.row,
            self.end.col,
            self.end.row,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Concat,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
            BinaryOp::Concat => "&",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
        }
    }

    /// Binding strength; higher binds tighter. Unary operators sit above
    /// every binary level.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 1,
            BinaryOp::Concat => 2,
            BinaryOp::Add | BinaryOp::Sub => 3,
            BinaryOp::Mul | BinaryOp::Div => 4,
            BinaryOp::Pow => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Function {
    Sum,
    Average,
    Min,
    Max,
    Count,
    If,
    Round,
    Abs,
    Vlookup,
}

impl Function {
    pub const ALL: [Function; 9] = [
        Function::Sum,
        Function::Average,
        Function::Min,
        Function::Max,
        Function::Count,
        Function::If,
        Function::Round,
        Function::Abs,
        Function::Vlookup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Sum => "SUM",
            Function::Average => "AVERAGE",
            Function::Min => "MIN",
            Function::Max => "MAX",
            Function::Count => "COUNT",
            Function::If => "IF",
            Function::Round => "ROUND",
            Function::Abs => "ABS",
            Function::Vlookup => "VLOOKUP",
        }
    }

    /// Accepted argument counts, inclusive.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Function::Sum | Function::Average | Function::Min | Function::Max | Function::Count => (1, 255),
            Function::If => (2, 3),
            Function::Round => (2, 2),
            Function::Abs => (1, 1),
            Function::Vlookup => (3, 4),
        }
    }

    /// Argument positions that hold an index or digit count rather than a
    /// quantity.
    pub fn index_positions(self) -> &'static [usize] {
        match self {
            Function::Vlookup => &[2],
            Function::Round => &[1],
            _ => &[],
        }
    }

    pub fn lookup(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parsed formula tree.
///
/// Number literals are non-negative; a leading minus is a [`UnaryOp::Neg`]
/// node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Text(String),
    Bool(bool),
    Ref(CellRef),
    Range(RangeRef),
    /// A reference whose target was deleted; evaluates to `#REF!`.
    RefError,
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: Function,
        args: Vec<Expr>,
    },
}

impl Expr {
    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Expr {
        Expr::Unary { op, operand: Box::new(operand) }
    }

    pub fn call(func: Function, args: Vec<Expr>) -> Expr {
        Expr::Call { func, args }
    }

    pub fn cell(col: u32, row: u32) -> Expr {
        Expr::Ref(CellRef { sheet: None, at: Coord::relative(col, row) })
    }

    /// Pre-order walk over every node.
    pub fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a Expr)) {
        visit(self);
        match self {
            Expr::Unary { operand, .. } => operand.walk(visit),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(visit);
                rhs.walk(visit);
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| a.walk(visit)),
            _ => {}
        }
    }
}

/// A formula as stored in a cell: the tree plus the text it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    ast: Expr,
    source: String,
}

impl Formula {
    pub fn parse(text: &str) -> Result<Self, super::SyntaxError> {
        let ast = super::parse(text)?;
        Ok(Self { ast, source: text.to_string() })
    }

    /// Wraps a tree; the source text becomes its canonical printing.
    pub fn from_ast(ast: Expr) -> Self {
        let source = super::print(&ast);
        Self { ast, source }
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl FromStr for Formula {
    type Err = super::SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Formula::parse(s)
    }
}
