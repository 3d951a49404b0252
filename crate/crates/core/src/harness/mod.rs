// SPDX-License-Identifier: Apache-2.0

//! Running programs through a compiler.
//!
//! Every program is first compiled with no pass (the validity gate); valid
//! programs are then run once per pass, each run isolated from the others.
//! Runs are classified as valid output, diagnostic rejection, crash or
//! timeout.

mod exec;
mod faultline;
mod registry;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ProgramId, TestProgram};

pub use exec::ExecCompiler;
pub use faultline::{faultline_compile, Fault, FaultlineCompiler, FaultlineSpec, GenOptions, Rewrite};
pub use registry::CompilerRegistry;

/// Per-run timeout unless configured otherwise.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

const CRASH_MARKERS: [&str; 2] = ["PLEASE submit a bug report", "Stack dump:"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("compiler not found: {0}")]
    CompilerMissing(String),
    #[error("pass {flag} listed twice (line {line})")]
    DuplicatePass { flag: String, line: usize },
    #[error("malformed pass list line {line}: {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("bad faultline spec: {0}")]
    BadSpec(String),
    #[error("unknown compiler kind {0:?}")]
    UnknownCompiler(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PassCategory {
    Conversion,
    GeneralTransformation,
    DialectTransformation,
    Bufferization,
    Other,
}

impl FromStr for PassCategory {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let norm: String = s.chars().filter(|c| !matches!(c, '-' | '_')).collect::<String>().to_ascii_lowercase();
        Ok(match norm.as_str() {
            "conversion" => PassCategory::Conversion,
            "generaltransformation" | "transformation" => PassCategory::GeneralTransformation,
            "dialecttransformation" | "dialect" => PassCategory::DialectTransformation,
            "bufferization" => PassCategory::Bufferization,
            "other" => PassCategory::Other,
            _ => return Err(()),
        })
    }
}

/// One compiler pass, invoked by its command-line flag.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PassSpec {
    pub flag: String,
    pub category: PassCategory,
}

impl PassSpec {
    pub fn new(flag: impl Into<String>, category: PassCategory) -> Option<Self> {
        let flag = flag.into();
        (flag.len() > 1 && flag.starts_with('-')).then_some(PassSpec { flag, category })
    }
}

/// Parses a pass list: one `<flag> [category]` per line, `#` comments.
pub fn parse_pass_list(text: &str) -> Result<Vec<PassSpec>, HarnessError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let malformed = || HarnessError::MalformedLine { line: i + 1, content: raw.to_string() };
        let mut fields = line.split_whitespace();
        let flag = fields.next().ok_or_else(malformed)?;
        let category = match fields.next() {
            Some(c) => c.parse().map_err(|_| malformed())?,
            None => PassCategory::Other,
        };
        if fields.next().is_some() {
            return Err(malformed());
        }
        let spec = PassSpec::new(flag, category).ok_or_else(malformed)?;
        if !seen.insert(spec.flag.clone()) {
            return Err(HarnessError::DuplicatePass { flag: spec.flag, line: i + 1 });
        }
        out.push(spec);
    }
    Ok(out)
}

pub fn load_pass_list(path: &Path) -> Result<Vec<PassSpec>, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
    parse_pass_list(&text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Valid,
    Diagnostic,
    Crash,
    Timeout,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub kind: OutcomeKind,
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub stderr: String,
    pub stdout: String,
    pub wall_time: Duration,
}

/// Whether stderr carries one of the crash markers.
pub fn has_crash_marker(stderr: &str) -> bool {
    CRASH_MARKERS.iter().any(|m| stderr.contains(m)) || crate::triage::has_assertion(stderr)
}

/// Total classification of a finished (or killed) run.
pub fn classify(exit_code: Option<i32>, signal: Option<i32>, stderr: &str, timed_out: bool) -> OutcomeKind {
    if timed_out {
        OutcomeKind::Timeout
    } else if signal.is_some() || has_crash_marker(stderr) {
        OutcomeKind::Crash
    } else if exit_code == Some(0) {
        OutcomeKind::Valid
    } else {
        OutcomeKind::Diagnostic
    }
}

impl ExecutionOutcome {
    pub fn new(
        exit_code: Option<i32>,
        signal: Option<i32>,
        stdout: String,
        stderr: String,
        wall_time: Duration,
        timed_out: bool,
    ) -> Self {
        let kind = classify(exit_code, signal, &stderr, timed_out);
        ExecutionOutcome { kind, exit_code, signal, stderr, stdout, wall_time }
    }

    pub fn is_valid(&self) -> bool {
        self.kind == OutcomeKind::Valid
    }
}

/// A compiler driver: `<compiler> [pass] <input>`.
pub trait Compiler: Send + Sync {
    fn name(&self) -> &str;

    fn run(&self, text: &str, pass: Option<&PassSpec>, timeout: Duration) -> Result<ExecutionOutcome, HarnessError>;

    /// Runs `text` under each pass separately, results in pass order.
    fn run_passes(
        &self,
        text: &str,
        passes: &[PassSpec],
        timeout: Duration,
    ) -> Result<Vec<ExecutionOutcome>, HarnessError> {
        passes.par_iter().map(|p| self.run(text, Some(p), timeout)).collect()
    }

    /// Simulated compilers report deterministic run times.
    fn is_simulated(&self) -> bool {
        false
    }
}

/// Compiles `q` with no pass applied.
pub fn compile_check(compiler: &dyn Compiler, q: &TestProgram, timeout: Duration) -> Result<ExecutionOutcome, HarnessError> {
    compiler.run(q.text(), None, timeout)
}

pub fn run_pass(
    compiler: &dyn Compiler,
    q: &TestProgram,
    pass: &PassSpec,
    timeout: Duration,
) -> Result<ExecutionOutcome, HarnessError> {
    compiler.run(q.text(), Some(pass), timeout)
}

/// Compile check, then one run per pass. A program that fails the check gets
/// an empty sweep.
pub fn sweep(
    compiler: &dyn Compiler,
    q: &TestProgram,
    passes: &[PassSpec],
    timeout: Duration,
) -> Result<Vec<(PassSpec, ExecutionOutcome)>, HarnessError> {
    if !compile_check(compiler, q, timeout)?.is_valid() {
        return Ok(Vec::new());
    }
    sweep_checked(compiler, q, passes, timeout)
}

/// The per-pass half of [`sweep`], for callers that already ran the check.
pub fn sweep_checked(
    compiler: &dyn Compiler,
    q: &TestProgram,
    passes: &[PassSpec],
    timeout: Duration,
) -> Result<Vec<(PassSpec, ExecutionOutcome)>, HarnessError> {
    let outcomes = compiler.run_passes(q.text(), passes, timeout)?;
    Ok(passes.iter().cloned().zip(outcomes).collect())
}

/// Output of a pass that ran cleanly over a program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedProgram {
    pub source_id: ProgramId,
    pub pass_flag: String,
    pub output_text: String,
}

/// Non-empty stdouts of the valid runs, in pass order.
pub fn transformed_outputs(q: &TestProgram, runs: &[(PassSpec, ExecutionOutcome)]) -> Vec<TransformedProgram> {
    runs.iter()
        .filter(|(_, o)| o.is_valid() && !o.stdout.trim().is_empty())
        .map(|(p, o)| TransformedProgram {
            source_id: q.id().clone(),
            pass_flag: p.flag.clone(),
            output_text: o.stdout.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_list_parsing() {
        let specs = parse_pass_list("# header\n-canonicalize GeneralTransformation\n\n-convert-vector-to-llvm conversion # c\n-inline\n").unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[1].category, PassCategory::Conversion);
        assert_eq!(specs[2].category, PassCategory::Other);
        assert!(parse_pass_list("").unwrap().is_empty());
        assert!(matches!(
            parse_pass_list("-inline\n-cse\n-inline\n"),
            Err(HarnessError::DuplicatePass { line: 3, .. })
        ));
        assert!(matches!(parse_pass_list("inline\n"), Err(HarnessError::MalformedLine { line: 1, .. })));
        assert!(matches!(parse_pass_list("-a b c\n"), Err(HarnessError::MalformedLine { .. })));
        assert!(matches!(parse_pass_list("-a Weird\n"), Err(HarnessError::MalformedLine { .. })));
    }

    #[test]
    fn shipped_pass_list_has_237_entries() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/passes.txt");
        let specs = load_pass_list(&path).unwrap();
        assert_eq!(specs.len(), 237);
    }

    #[test]
    fn classification_is_total_and_exclusive() {
        use OutcomeKind::*;
        assert_eq!(classify(Some(0), None, "", false), Valid);
        assert_eq!(classify(Some(1), None, "x.mlir:1:1: error: oops", false), Diagnostic);
        assert_eq!(classify(None, Some(11), "", false), Crash);
        assert_eq!(classify(Some(1), None, "Stack dump:\n0. ...", false), Crash);
        assert_eq!(classify(Some(134), None, "foo.cpp:3: f(): Assertion `x' failed.", false), Crash);
        assert_eq!(classify(Some(0), None, "PLEASE submit a bug report to ...", false), Crash);
        assert_eq!(classify(None, Some(9), "Stack dump:", true), Timeout);
    }
}
