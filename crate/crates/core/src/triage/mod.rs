// SPDX-License-Identifier: Apache-2.0

//! Crash deduplication.
//!
//! A crash is keyed by its assertion expression when stderr has one, else by
//! the relevant stack frames. Crashes with neither fall back to a catch-all
//! key built from the tail of stderr and are flagged as low confidence.

mod export;

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ProgramId;

pub use export::{export_registry, BugIndexEntry, BUG_INDEX_FILE};

pub const DEFAULT_FRAME_PREFIXES: [&str; 1] = ["mlir::"];
const CATCH_ALL_LINES: usize = 5;

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("stderr carries neither an assertion nor a relevant stack frame")]
    NoSignal,
    #[error("crash of {program} under {pass:?} already recorded")]
    DuplicateOccurrence { program: String, pass: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeyKind {
    Assertion,
    Trace,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BugKey {
    pub kind: KeyKind,
    pub value: String,
    #[serde(default)]
    pub low_confidence: bool,
}

struct Patterns {
    assertion: [Regex; 3],
    frame: Regex,
    location: Regex,
    trailers: [Regex; 4],
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        assertion: [
            // glibc and the toy compiler: Assertion `expr' failed.
            Regex::new(r"Assertion [`'](.+)' failed").unwrap(),
            // BSD libc: Assertion failed: (expr), function f, file x.c, line 3.
            Regex::new(r"Assertion failed: \((.+)\), function").unwrap(),
            Regex::new(r"\bassert\((.+)\)").unwrap(),
        ],
        frame: Regex::new(r"^\s*#\d+\s+(?:0x[0-9a-fA-F]+\s+)?(?:in\s+)?(.+)$").unwrap(),
        location: Regex::new(r"[\w./-]*\.(?:cpp|cc|cxx|c|h|hpp|inc|td):\d+(?::\d+)?").unwrap(),
        trailers: [
            Regex::new(r"\s+\([^()]*\+0x[0-9a-fA-F]+\)$").unwrap(),
            Regex::new(r"\s+at\s+\S+$").unwrap(),
            Regex::new(r"\s+/\S+:\d+(?::\d+)?$").unwrap(),
            Regex::new(r"\s+\+\s*(?:0x[0-9a-fA-F]+|\d+)$").unwrap(),
        ],
    })
}

/// Whitespace collapsed, source locations and a trailing period removed.
pub fn normalize_assertion(expr: &str) -> String {
    let stripped = patterns().location.replace_all(expr, "");
    let collapsed = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches('.').trim().to_string()
}

fn find_assertion(stderr: &str) -> Option<String> {
    let p = patterns();
    stderr.lines().find_map(|line| {
        p.assertion
            .iter()
            .find_map(|re| re.captures(line))
            .map(|c| normalize_assertion(&c[1]))
            .filter(|e| !e.is_empty())
    })
}

pub fn has_assertion(stderr: &str) -> bool {
    find_assertion(stderr).is_some()
}

/// The symbol of a stack-frame line, with address, offset and location removed.
pub fn frame_symbol(line: &str) -> Option<String> {
    let p = patterns();
    let mut sym = p.frame.captures(line)?[1].trim().to_string();
    loop {
        let before = sym.len();
        for re in &p.trailers {
            sym = re.replace(&sym, "").into_owned();
        }
        if sym.len() == before {
            break;
        }
    }
    (!sym.is_empty()).then_some(sym)
}

/// Dedup key of a crash. Pure in its inputs.
pub fn extract_bug_key(stderr: &str, frame_prefixes: &[impl AsRef<str>]) -> Result<BugKey, TriageError> {
    if let Some(expr) = find_assertion(stderr) {
        return Ok(BugKey { kind: KeyKind::Assertion, value: expr, low_confidence: false });
    }
    let frames: Vec<String> = stderr
        .lines()
        .filter_map(frame_symbol)
        .filter(|s| frame_prefixes.iter().any(|p| s.starts_with(p.as_ref())))
        .collect();
    if frames.is_empty() {
        return Err(TriageError::NoSignal);
    }
    Ok(BugKey { kind: KeyKind::Trace, value: frames.join("\n"), low_confidence: false })
}

/// The last five non-blank stderr lines, flagged low confidence.
pub fn catch_all_key(stderr: &str) -> BugKey {
    let lines: Vec<&str> = stderr.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let tail = &lines[lines.len().saturating_sub(CATCH_ALL_LINES)..];
    BugKey { kind: KeyKind::Trace, value: tail.join("\n"), low_confidence: true }
}

/// [`extract_bug_key`], falling back to [`catch_all_key`].
pub fn bug_key_or_catch_all(stderr: &str, frame_prefixes: &[impl AsRef<str>]) -> BugKey {
    extract_bug_key(stderr, frame_prefixes).unwrap_or_else(|_| catch_all_key(stderr))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub program_id: ProgramId,
    /// Empty for crashes of the pass-free validity run.
    pub pass_flag: String,
    pub bug_key: BugKey,
    pub stderr: String,
    pub first_seen: DateTime<Utc>,
    pub iteration: u32,
    pub program_text: String,
}

/// All crashes so far, bucketed by key. Buckets keep first-seen order.
#[derive(Clone, Debug, Default)]
pub struct BugRegistry {
    log: Vec<CrashRecord>,
    buckets: Vec<(BugKey, Vec<usize>)>,
    by_key: HashMap<BugKey, usize>,
    seen: HashSet<(ProgramId, String)>,
}

impl BugRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Files `rec` under its key; true iff it opened a new bucket.
    pub fn register_crash(&mut self, rec: CrashRecord) -> Result<bool, TriageError> {
        let occurrence = (rec.program_id.clone(), rec.pass_flag.clone());
        if self.seen.contains(&occurrence) {
            return Err(TriageError::DuplicateOccurrence {
                program: rec.program_id.to_string(),
                pass: rec.pass_flag,
            });
        }
        self.seen.insert(occurrence);
        let at = self.log.len();
        let is_new = match self.by_key.get(&rec.bug_key) {
            Some(&b) => {
                self.buckets[b].1.push(at);
                false
            }
            None => {
                self.by_key.insert(rec.bug_key.clone(), self.buckets.len());
                self.buckets.push((rec.bug_key.clone(), vec![at]));
                true
            }
        };
        self.log.push(rec);
        Ok(is_new)
    }

    pub fn bug_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn record_count(&self) -> usize {
        self.log.len()
    }

    /// Records in registration order.
    pub fn records(&self) -> &[CrashRecord] {
        &self.log
    }

    pub fn keys(&self) -> impl Iterator<Item = &BugKey> {
        self.buckets.iter().map(|(k, _)| k)
    }

    /// Buckets in first-seen order with their members.
    pub fn buckets(&self) -> impl Iterator<Item = (&BugKey, Vec<&CrashRecord>)> {
        self.buckets.iter().map(|(k, idx)| (k, idx.iter().map(|&i| &self.log[i]).collect()))
    }

    /// One JSON record per line, in registration order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Replays a [`BugRegistry::to_jsonl`] dump.
    pub fn from_jsonl(text: &str) -> Result<Self, TriageError> {
        let mut reg = BugRegistry::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: CrashRecord =
                serde_json::from_str(line).map_err(|e| TriageError::Malformed { line: i + 1, message: e.to_string() })?;
            reg.register_crash(rec)
                .map_err(|e| TriageError::Malformed { line: i + 1, message: e.to_string() })?;
        }
        Ok(reg)
    }
}
