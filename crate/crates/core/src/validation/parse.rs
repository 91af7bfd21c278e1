//! Parser for validation rule sources.

use thiserror::Error;

use super::{ColumnCheck, CondExpr, Condition, PatternElement, Scope, ValidationRule};
use crate::address::{column_index, MAX_ROWS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule syntax error at offset {position}: {message}")]
pub struct RuleSyntaxError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Num(f64),
    Quoted(String),
    Punct(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, RuleSyntaxError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let err = |position: usize, message: &str| RuleSyntaxError { position, message: message.into() };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '"' || c == '\'' {
            let mut text = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(err(pos, "unterminated string")),
                    Some(&(_, '\\')) if c == '"' => {
                        let Some(&(_, next)) = chars.get(i + 1) else { return Err(err(pos, "unterminated string")) };
                        text.push(next);
                        i += 2;
                    }
                    Some(&(_, q)) if q == c => {
                        if c == '\'' && chars.get(i + 1).is_some_and(|&(_, n)| n == '\'') {
                            text.push('\'');
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(&(_, other)) => {
                        text.push(other);
                        i += 1;
                    }
                }
            }
            out.push((pos, if c == '"' { Tok::Str(text) } else { Tok::Quoted(text) }));
        } else if c.is_ascii_digit()
            || (c == '-' && chars.get(i + 1).is_some_and(|&(_, n)| n.is_ascii_digit() || n == '.'))
            || c == '.'
        {
            let start = i;
            i += 1;
            while chars.get(i).is_some_and(|&(_, d)| d.is_ascii_digit() || d == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().map(|&(_, ch)| ch).collect();
            // A run of digits glued to letters is a cell coordinate fragment, not a number.
            if chars.get(i).is_some_and(|&(_, d)| d.is_ascii_alphabetic()) {
                return Err(err(pos, "unexpected characters after number"));
            }
            let n: f64 = text.parse().map_err(|_| err(pos, "malformed number"))?;
            out.push((pos, Tok::Num(n)));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while chars.get(i).is_some_and(|&(_, d)| d.is_alphanumeric() || d == '_' || d == '-') {
                i += 1;
            }
            out.push((pos, Tok::Word(chars[start..i].iter().map(|&(_, ch)| ch).collect())));
        } else if "(),!:".contains(c) {
            out.push((pos, Tok::Punct(c)));
            i += 1;
        } else {
            return Err(err(pos, &format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, RuleSyntaxError> {
        Err(RuleSyntaxError { position: self.pos(), message: message.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|t| t.1.clone());
        self.at += 1;
        t
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), RuleSyntaxError> {
        if self.peek_keyword(kw) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn punct(&mut self, c: char) -> Result<(), RuleSyntaxError> {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn string(&mut self) -> Result<String, RuleSyntaxError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.err("expected a string literal"),
        }
    }

    fn number(&mut self) -> Result<f64, RuleSyntaxError> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.at += 1;
                Ok(n)
            }
            _ => self.err("expected a number"),
        }
    }

    fn column(&mut self) -> Result<u32, RuleSyntaxError> {
        match self.peek() {
            Some(Tok::Word(w)) if w.chars().all(|c| c.is_ascii_uppercase()) => match column_index(w) {
                Some(c) => {
                    self.at += 1;
                    Ok(c)
                }
                None => self.err("column out of range"),
            },
            _ => self.err("expected a column letter"),
        }
    }

    fn scope(&mut self) -> Result<Scope, RuleSyntaxError> {
        let sheet = match self.next() {
            Some(Tok::Word(w)) | Some(Tok::Quoted(w)) => w,
            _ => {
                self.at -= 1;
                return self.err("expected a sheet name");
            }
        };
        self.punct('!')?;
        let first = self.coordinate()?;
        self.punct(':')?;
        let second = self.coordinate()?;
        let rows = match (first.1, second.1) {
            (Some(a), Some(b)) => Some((a.min(b), a.max(b))),
            (None, None) => None,
            _ => return self.err("scope must be either a whole-column or a cell range"),
        };
        Ok(Scope { sheet, start_col: first.0.min(second.0), end_col: first.0.max(second.0), rows })
    }

    /// `A`, `A2` or `AB17`.
    fn coordinate(&mut self) -> Result<(u32, Option<u32>), RuleSyntaxError> {
        let Some(Tok::Word(w)) = self.peek().cloned() else { return self.err("expected a column or cell") };
        let split = w.find(|c: char| !c.is_ascii_alphabetic()).unwrap_or(w.len());
        let (letters, digits) = w.split_at(split);
        let col = column_index(letters).filter(|_| letters.chars().all(|c| c.is_ascii_uppercase()));
        let row = if digits.is_empty() {
            None
        } else {
            match digits.parse::<u32>() {
                Ok(r) if (1..=MAX_ROWS).contains(&r) && !digits.starts_with('0') => Some(r),
                _ => return self.err("malformed row"),
            }
        };
        match col {
            Some(c) => {
                self.at += 1;
                Ok((c, row))
            }
            None => self.err("malformed column"),
        }
    }

    fn or(&mut self) -> Result<CondExpr, RuleSyntaxError> {
        let mut parts = vec![self.and()?];
        while self.peek_keyword("OR") {
            self.at += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 { parts.pop().expect("one") } else { CondExpr::Or(flatten(parts, true)) })
    }

    fn and(&mut self) -> Result<CondExpr, RuleSyntaxError> {
        let mut parts = vec![self.unary()?];
        while self.peek_keyword("AND") {
            self.at += 1;
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().expect("one") } else { CondExpr::And(flatten(parts, false)) })
    }

    fn unary(&mut self) -> Result<CondExpr, RuleSyntaxError> {
        if self.peek_keyword("NOT") {
            self.at += 1;
            return Ok(CondExpr::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::Punct('(')) {
            self.at += 1;
            let inner = self.or()?;
            self.punct(')')?;
            return Ok(inner);
        }
        self.atom().map(CondExpr::Leaf)
    }

    fn atom(&mut self) -> Result<Condition, RuleSyntaxError> {
        let Some(Tok::Word(w)) = self.peek().cloned() else { return self.err("expected a condition") };
        let name = w.to_ascii_lowercase();
        self.at += 1;
        let cond = match name.as_str() {
            "non_empty" => Condition::NonEmpty,
            "is_number" => Condition::IsNumber,
            "is_text" => Condition::IsText,
            "starts_with" | "ends_with" | "contains" => {
                self.punct('(')?;
                let s = self.string()?;
                self.punct(')')?;
                match name.as_str() {
                    "starts_with" => Condition::StartsWith(s),
                    "ends_with" => Condition::EndsWith(s),
                    _ => Condition::Contains(s),
                }
            }
            "between" => {
                self.punct('(')?;
                let lo = self.number()?;
                self.punct(',')?;
                let hi = self.number()?;
                self.punct(')')?;
                if lo > hi {
                    self.at -= 1;
                    return self.err("between needs lo <= hi");
                }
                Condition::NumericBetween { lo, hi }
            }
            "matches" => {
                self.punct('(')?;
                let mut elements = vec![self.element()?];
                while self.peek() == Some(&Tok::Punct(',')) {
                    self.at += 1;
                    elements.push(self.element()?);
                }
                self.punct(')')?;
                Condition::ShapePattern(elements)
            }
            _ => {
                self.at -= 1;
                return self.err(format!("unknown condition {w:?}"));
            }
        };
        Ok(cond)
    }

    fn element(&mut self) -> Result<PatternElement, RuleSyntaxError> {
        match self.peek().cloned() {
            Some(Tok::Str(s)) => {
                self.at += 1;
                Ok(PatternElement::Literal(s))
            }
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("any") => {
                self.at += 1;
                Ok(PatternElement::AnyRun)
            }
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("digits") => {
                self.at += 1;
                self.punct('(')?;
                let n = self.number()?;
                if n < 0.0 || n.fract() != 0.0 || n > 1e6 {
                    self.at -= 1;
                    return self.err("digits needs a whole count");
                }
                self.punct(')')?;
                Ok(PatternElement::Digits(n as u32))
            }
            _ => self.err("expected digits(n), any or a string"),
        }
    }

    fn check(&mut self) -> Result<ColumnCheck, RuleSyntaxError> {
        let column = self.column()?;
        if self.at >= self.toks.len() || self.peek_keyword("REQUIRE") {
            return self.err("missing condition");
        }
        Ok(ColumnCheck { column, expr: self.or()? })
    }
}

fn flatten(parts: Vec<CondExpr>, or: bool) -> Vec<CondExpr> {
    let mut out = Vec::new();
    for p in parts {
        match p {
            CondExpr::Or(inner) if or => out.extend(inner),
            CondExpr::And(inner) if !or => out.extend(inner),
            other => out.push(other),
        }
    }
    out
}

pub fn compile_rule(src: &str) -> Result<ValidationRule, RuleSyntaxError> {
    let mut p = Parser { toks: lex(src)?, at: 0, end: src.len() };
    p.keyword("RULE")?;
    let id = match p.next() {
        Some(Tok::Word(w)) => w,
        _ => {
            p.at -= 1;
            return p.err("expected a rule id");
        }
    };
    p.keyword("ON")?;
    let scope = p.scope()?;
    let guard = if p.peek_keyword("WHEN") {
        p.at += 1;
        Some(p.check()?)
    } else {
        None
    };
    p.keyword("REQUIRE")?;
    let requirement = p.check()?;
    if p.at < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    for c in guard.iter().chain([&requirement]) {
        if c.column < scope.start_col || c.column > scope.end_col {
            return Err(RuleSyntaxError { position: 0, message: "condition column lies outside the scope".into() });
        }
    }
    Ok(ValidationRule { id, scope, guard, requirement, broken: None })
}
