// SPDX-License-Identifier: Apache-2.0

use std::ops::Range;

use super::{tokenize, ProgramId, TestProgram, Token};

/// One top-level unit cut out of a seed file.
#[derive(Clone, Debug)]
pub struct SeedUnit {
    pub program: TestProgram,
    /// The exact slice of the input the unit was cut from.
    pub source: String,
    pub byte_range: Range<usize>,
    /// 1-based.
    pub start_line: usize,
}

/// A unit whose braces never re-balanced before the end of the file. The
/// remainder of the file from `start_line` on was skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnbalancedDelimiters {
    pub start_line: usize,
    pub skipped_bytes: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SplitReport {
    pub units: Vec<SeedUnit>,
    pub unbalanced: Option<UnbalancedDelimiters>,
}

impl SplitReport {
    pub fn programs(&self) -> impl Iterator<Item = &TestProgram> {
        self.units.iter().map(|u| &u.program)
    }
}

fn starts_unit(first: &Token) -> bool {
    let s = first.as_str();
    matches!(s, "func" | "module") || s.ends_with(".func") || s.ends_with(".module")
}

struct Open {
    start: usize,
    line: usize,
    opened: bool,
}

/// Cuts `file_text` into one seed program per top-level function or module.
///
/// A unit starts on a line whose first token is a function or module keyword
/// at brace depth zero and ends with the line holding its balancing `}`.
/// Bodiless declarations (no `{` on the header line) are not units. Unit ids
/// are `<id_prefix>.<n>`.
pub fn split_seed_file(file_text: &str, id_prefix: &str) -> SplitReport {
    let mut report = SplitReport::default();
    let mut depth = 0usize;
    let mut open: Option<Open> = None;
    let mut offset = 0;

    for (line_idx, raw_line) in file_text.split_inclusive('\n').enumerate() {
        let line_start = offset;
        offset += raw_line.len();
        let line = raw_line.strip_suffix('\n').unwrap_or(raw_line);
        let tokens = tokenize(line);

        if open.is_none() && depth == 0 {
            if let Some(first) = tokens.first() {
                if starts_unit(first) {
                    open = Some(Open { start: line_start, line: line_idx + 1, opened: false });
                }
            }
        }

        for tok in &tokens {
            if tok.is_open_brace() {
                depth += 1;
                if let Some(o) = open.as_mut() {
                    o.opened = true;
                }
            } else if tok.is_close_brace() {
                depth = depth.saturating_sub(1);
            }
        }

        let Some(o) = open.as_ref() else { continue };
        if !o.opened {
            open = None;
            continue;
        }
        if depth == 0 {
            let range = o.start..line_start + line.len();
            let source = file_text[range.clone()].to_string();
            let id = ProgramId::new(format!("{id_prefix}.{}", report.units.len()));
            // A unit always holds its keyword, so the token list is non-empty.
            let program = TestProgram::seed(id, tokenize(&source)).expect("unit has tokens");
            report.units.push(SeedUnit { program, source, byte_range: range, start_line: o.line });
            open = None;
        }
    }

    if let Some(o) = open {
        log::warn!("unbalanced braces from line {}; remainder skipped", o.line);
        report.unbalanced = Some(UnbalancedDelimiters {
            start_line: o.line,
            skipped_bytes: file_text.len() - o.start,
        });
    }
    report
}
