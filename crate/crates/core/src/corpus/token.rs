// SPDX-License-Identifier: Apache-2.0

//! Lexical tokenizer for textual IR.
//!
//! The lexer is deliberately shallow: it knows enough about IR surface syntax
//! to keep dotted operation names (`func.func`), sigil-prefixed names (`%0`,
//! `@f`, `#map`, `!llvm.ptr`, `^bb0`), numeric literals (`42`, `1.5e-3`,
//! `4x4xf32`) and string literals whole, and emits everything else as
//! single-character punctuation. Line breaks survive as a dedicated newline
//! token so that generated programs keep their line structure.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Text of the dedicated newline token.
pub const NEWLINE: &str = "\n";

/// One lexical unit of program text.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(Arc<str>);

impl Token {
    /// Panics on empty text; tokens are never empty.
    pub fn new(text: impl Into<Arc<str>>) -> Self {
        let text = text.into();
        assert!(!text.is_empty(), "tokens must be non-empty");
        Token(text)
    }

    pub fn newline() -> Self {
        Token::new(NEWLINE)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_newline(&self) -> bool {
        &*self.0 == NEWLINE
    }

    pub fn is_open_brace(&self) -> bool {
        &*self.0 == "{"
    }

    pub fn is_close_brace(&self) -> bool {
        &*self.0 == "}"
    }

    /// Comments and unterminated strings run to the end of the line, so the
    /// only token that may follow them without merging is a newline.
    pub fn is_line_terminal(&self) -> bool {
        let s = self.as_str();
        s.starts_with("//") || (s.starts_with('"') && !is_closed_string(s))
    }

    fn is_word(&self) -> bool {
        let s = self.as_str();
        let first = s.chars().next().unwrap_or(' ');
        if first.is_ascii_alphabetic() || first == '_' {
            return true;
        }
        if is_sigil(first) && s.len() > 1 {
            return true;
        }
        first == '"' && is_closed_string(s)
    }

    fn is_number(&self) -> bool {
        self.as_str().starts_with(|c: char| c.is_ascii_digit())
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_str())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token::new(s)
    }
}

fn is_sigil(c: char) -> bool {
    matches!(c, '%' | '@' | '#' | '!' | '^')
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$')
}

fn is_closed_string(s: &str) -> bool {
    let bytes = s.as_bytes();
    if bytes.len() < 2 || bytes[0] != b'"' {
        return false;
    }
    string_end(s, 0) == Some(s.len())
}

/// Byte offset one past the closing quote of the string literal starting at
/// `start`, if it closes before the end of the line.
fn string_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                if i + 1 < bytes.len() && bytes[i + 1] != b'\n' {
                    i += 2;
                } else {
                    return None;
                }
            }
            b'"' => return Some(i + 1),
            b'\n' => return None,
            _ => i += 1,
        }
    }
    None
}

fn line_end(text: &str, start: usize) -> usize {
    text[start..].find('\n').map_or(text.len(), |off| start + off)
}

/// Splits `text` into tokens. Total and deterministic.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(c) = text[i..].chars().next() {
        if c == '\n' {
            out.push(Token::newline());
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        let start = i;
        let rest = &text[i..];
        let end = if rest.starts_with("//") {
            let end = line_end(text, start);
            start + text[start..end].trim_end().len()
        } else if c == '"' {
            string_end(text, start).unwrap_or_else(|| {
                let end = line_end(text, start);
                start + text[start..end].trim_end().len()
            })
        } else if rest.starts_with("->") {
            start + 2
        } else if is_ident_start(c) {
            scan_while(text, start + 1, is_ident_continue)
        } else if c.is_ascii_digit() {
            scan_number(text, start)
        } else if is_sigil(c) {
            match rest[1..].chars().next() {
                Some('"') => string_end(text, start + 1).unwrap_or(start + 1),
                Some(n) if is_ident_continue(n) => scan_while(text, start + 1, is_ident_continue),
                _ => start + 1,
            }
        } else {
            start + c.len_utf8()
        };
        out.push(Token::new(&text[start..end]));
        i = end;
    }
    out
}

fn scan_while(text: &str, mut i: usize, pred: impl Fn(char) -> bool) -> usize {
    while let Some(c) = text[i..].chars().next() {
        if !pred(c) {
            break;
        }
        i += c.len_utf8();
    }
    i
}

fn scan_number(text: &str, start: usize) -> usize {
    let bytes = text.as_bytes();
    let digit_at = |j: usize| j < bytes.len() && bytes[j].is_ascii_digit();
    let mut i = start + 1;
    while i < bytes.len() {
        let b = bytes[i];
        if b.is_ascii_alphanumeric() || b == b'_' {
            i += 1;
        } else if b == b'.' && digit_at(i + 1) {
            i += 1;
        } else if (b == b'+' || b == b'-') && matches!(bytes[i - 1], b'e' | b'E') && digit_at(i + 1)
        {
            i += 1;
        } else {
            break;
        }
    }
    i
}

fn needs_space(prev: &Token, next: &Token) -> bool {
    if prev.is_line_terminal() {
        return true;
    }
    let (p, n) = (prev.as_str(), next.as_str());
    if matches!(p, "(" | "[" | "<" | "?") {
        return false;
    }
    if matches!(n, ")" | "]" | "," | ":") {
        return false;
    }
    if n == ">" {
        return p == "-";
    }
    if matches!(n, "(" | "<" | "[") && prev.is_word() {
        return false;
    }
    if p == "-" && next.is_number() {
        return false;
    }
    true
}

/// Renders tokens as text. Newline tokens become line breaks and each line is
/// indented by its brace depth; `tokenize(detokenize(ts)) == ts` for every
/// token sequence produced by [`tokenize`].
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::with_capacity(tokens.len() * 6);
    let mut depth = 0usize;
    let mut line_start = true;
    let mut prev: Option<&Token> = None;
    for tok in tokens {
        if tok.is_newline() {
            out.push('\n');
            line_start = true;
            prev = Some(tok);
            continue;
        }
        if line_start {
            let indent = if tok.is_close_brace() { depth.saturating_sub(1) } else { depth };
            for _ in 0..indent {
                out.push_str("  ");
            }
            line_start = false;
        } else if let Some(p) = prev {
            if needs_space(p, tok) {
                out.push(' ');
            }
        }
        out.push_str(tok.as_str());
        if tok.is_open_brace() {
            depth += 1;
        } else if tok.is_close_brace() {
            depth = depth.saturating_sub(1);
        }
        prev = Some(tok);
    }
    out
}
