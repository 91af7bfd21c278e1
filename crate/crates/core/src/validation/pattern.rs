//! Anchored shape patterns such as `digits(10), "bar"`.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternElement {
    /// Exactly `n` ASCII digits.
    Digits(u32),
    Literal(String),
    /// Any run of characters, possibly empty.
    AnyRun,
}

impl fmt::Display for PatternElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternElement::Digits(n) => write!(f, "digits({n})"),
            PatternElement::Literal(s) => super::write_string(f, s),
            PatternElement::AnyRun => f.write_str("any"),
        }
    }
}

/// Whether `elements` match the whole of `text`. Runs are tried longest
/// first with backtracking; failed `(element, position)` pairs are
/// remembered so the search stays polynomial.
pub fn matches(elements: &[PatternElement], text: &str) -> bool {
    let chars: Vec<char> = text.chars().collect();
    let mut failed = vec![false; (elements.len() + 1) * (chars.len() + 1)];
    step(elements, 0, &chars, 0, &mut failed)
}

fn step(elements: &[PatternElement], e: usize, text: &[char], i: usize, failed: &mut [bool]) -> bool {
    let slot = e * (text.len() + 1) + i;
    if failed[slot] {
        return false;
    }
    let ok = match elements.get(e) {
        None => i == text.len(),
        Some(PatternElement::Digits(n)) => {
            let end = i + *n as usize;
            end <= text.len()
                && text[i..end].iter().all(char::is_ascii_digit)
                && step(elements, e + 1, text, end, failed)
        }
        Some(PatternElement::Literal(s)) => {
            let lit: Vec<char> = s.chars().collect();
            text[i..].starts_with(&lit) && step(elements, e + 1, text, i + lit.len(), failed)
        }
        Some(PatternElement::AnyRun) => (i..=text.len()).rev().any(|j| step(elements, e + 1, text, j, failed)),
    };
    if !ok {
        failed[slot] = true;
    }
    ok
}
