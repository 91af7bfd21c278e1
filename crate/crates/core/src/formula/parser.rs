//! Recursive-descent parser for the formula grammar in
//! `docs/formula-grammar.md`.

use thiserror::Error;

use super::ast::{BinaryOp, CellRef, Coord, Expr, Function, RangeRef, UnaryOp};
use crate::address::{column_index, MAX_ROWS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {position}: expected {expected}")]
pub struct SyntaxError {
    /// Character offset into the formula text.
    pub position: usize,
    pub expected: String,
}

pub fn parse(text: &str) -> Result<Expr, SyntaxError> {
    let chars: Vec<char> = text.chars().collect();
    let mut p = Parser { chars, pos: 0 };
    if !p.eat('=') {
        return Err(p.error("'=' at start of formula"));
    }
    let expr = p.comparison()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.error("operator or end of formula"));
    }
    Ok(expr)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn error(&self, expected: &str) -> SyntaxError {
        SyntaxError { position: self.pos, expected: expected.to_string() }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.concat()?;
        loop {
            self.skip_ws();
            let op = match (self.peek(), self.peek_at(1)) {
                (Some('<'), Some('>')) => (BinaryOp::Ne, 2),
                (Some('<'), Some('=')) => (BinaryOp::Le, 2),
                (Some('>'), Some('=')) => (BinaryOp::Ge, 2),
                (Some('<'), _) => (BinaryOp::Lt, 1),
                (Some('>'), _) => (BinaryOp::Gt, 1),
                (Some('='), _) => (BinaryOp::Eq, 1),
                _ => return Ok(lhs),
            };
            self.pos += op.1;
            let rhs = self.concat()?;
            lhs = Expr::binary(op.0, lhs, rhs);
        }
    }

    fn concat(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.additive()?;
        loop {
            self.skip_ws();
            if !self.eat('&') {
                return Ok(lhs);
            }
            let rhs = self.additive()?;
            lhs = Expr::binary(BinaryOp::Concat, lhs, rhs);
        }
    }

    fn additive(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.multiplicative()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some('+') => BinaryOp::Add,
                Some('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.multiplicative()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.power()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some('*') => BinaryOp::Mul,
                Some('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.power()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn power(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            if !self.eat('^') {
                return Ok(lhs);
            }
            let rhs = self.unary()?;
            lhs = Expr::binary(BinaryOp::Pow, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        self.skip_ws();
        if self.eat('-') {
            return Ok(Expr::unary(UnaryOp::Neg, self.unary()?));
        }
        if self.eat('+') {
            return Ok(Expr::unary(UnaryOp::Plus, self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let inner = self.comparison()?;
                self.skip_ws();
                if !self.eat(')') {
                    return Err(self.error("')'"));
                }
                Ok(inner)
            }
            Some('"') => self.text(),
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some('#') => self.ref_error(),
            Some('\'') => {
                let sheet = self.quoted_sheet()?;
                self.reference(Some(sheet))
            }
            Some(c) if c.is_alphabetic() || c == '_' || c == '$' => self.word_led(),
            _ => Err(self.error("value, reference, function or '('")),
        }
    }

    fn text(&mut self) -> Result<Expr, SyntaxError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.error("closing '\"'")),
                Some('"') => {
                    self.pos += 1;
                    if self.eat('"') {
                        out.push('"');
                    } else {
                        return Ok(Expr::Text(out));
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn number(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.eat('.') {
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let slice: String = self.chars[start..self.pos].iter().collect();
        match slice.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(Expr::Number(n)),
            _ => {
                self.pos = start;
                Err(self.error("number"))
            }
        }
    }

    fn ref_error(&mut self) -> Result<Expr, SyntaxError> {
        let tail: String = self.chars[self.pos..].iter().take(5).collect();
        if tail.eq_ignore_ascii_case("#REF!") {
            self.pos += 5;
            Ok(Expr::RefError)
        } else {
            Err(self.error("#REF!"))
        }
    }

    fn quoted_sheet(&mut self) -> Result<String, SyntaxError> {
        self.pos += 1;
        let mut name = String::new();
        loop {
            match self.peek() {
                None => return Err(self.error("closing quote of sheet name")),
                Some('\'') => {
                    self.pos += 1;
                    if self.eat('\'') {
                        name.push('\'');
                    } else {
                        break;
                    }
                }
                Some(c) => {
                    name.push(c);
                    self.pos += 1;
                }
            }
        }
        if name.is_empty() {
            return Err(self.error("sheet name"));
        }
        if !self.eat('!') {
            return Err(self.error("'!' after sheet name"));
        }
        Ok(name)
    }

    fn word(&mut self) -> String {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_' || c == '$' || c == '.') {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn word_led(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.pos;
        let word = self.word();
        if self.peek() == Some('!') {
            if word.contains('$') || word.is_empty() {
                self.pos = start;
                return Err(self.error("sheet name"));
            }
            self.pos += 1;
            return self.reference(Some(word));
        }
        let after_word = self.pos;
        self.skip_ws();
        if self.peek() == Some('(') {
            let func = Function::lookup(&word)
                .ok_or(SyntaxError { position: start, expected: "known function name".to_string() })?;
            self.pos += 1;
            return self.call(func, start);
        }
        self.pos = after_word;
        if word.eq_ignore_ascii_case("TRUE") {
            return Ok(Expr::Bool(true));
        }
        if word.eq_ignore_ascii_case("FALSE") {
            return Ok(Expr::Bool(false));
        }
        self.pos = start;
        self.reference(None)
    }

    fn call(&mut self, func: Function, start: usize) -> Result<Expr, SyntaxError> {
        let mut args = Vec::new();
        self.skip_ws();
        if !self.eat(')') {
            loop {
                args.push(self.comparison()?);
                self.skip_ws();
                if self.eat(',') {
                    continue;
                }
                if self.eat(')') {
                    break;
                }
                return Err(self.error("',' or ')'"));
            }
        }
        let (lo, hi) = func.arity();
        if args.len() < lo || args.len() > hi {
            let expected = if lo == hi {
                format!("{lo} argument(s) for {func}")
            } else {
                format!("{lo} to {hi} arguments for {func}")
            };
            return Err(SyntaxError { position: start, expected });
        }
        Ok(Expr::call(func, args))
    }

    fn coord(&mut self) -> Result<Coord, SyntaxError> {
        let start = self.pos;
        let col_abs = self.eat('$');
        let letters_start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        let letters: String = self.chars[letters_start..self.pos].iter().collect();
        let row_abs = self.eat('$');
        let digits_start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let digits: String = self.chars[digits_start..self.pos].iter().collect();
        let col = column_index(&letters);
        let row = digits.parse::<u32>().ok().filter(|r| (1..=MAX_ROWS).contains(r) && !digits.starts_with('0'));
        // A trailing identifier character means this was not a cell at all.
        let clean_end = !matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_' || c == '$' || c == '.');
        match (col, row) {
            (Some(col), Some(row)) if clean_end => Ok(Coord { col, row, col_abs, row_abs }),
            _ => {
                self.pos = start;
                Err(self.error("cell reference"))
            }
        }
    }

    fn reference(&mut self, sheet: Option<String>) -> Result<Expr, SyntaxError> {
        if sheet.is_some() && self.peek() == Some('#') {
            return self.ref_error();
        }
        let a = self.coord()?;
        if self.eat(':') {
            let b = self.coord()?;
            return Ok(Expr::Range(RangeRef::new(sheet, a, b)));
        }
        Ok(Expr::Ref(CellRef { sheet, at: a }))
    }
}
