// SPDX-License-Identifier: Apache-2.0

//! Figures computed over finished campaigns, and the report bundle.
//!
//! `report.json` layout (schema version 1):
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "label": string,
//!   "iterations": int,
//!   "elapsed_seconds": float,
//!   "totals": {generated, compile_valid, crashes, timeouts, distinct_bugs,
//!              low_confidence_bugs, programs_added, transformed_added},
//!   "throughput_tests_per_minute": float | null,   // null when elapsed is 0
//!   "validity_rate": float | null,                 // null when nothing was generated
//!   "iteration_reports": [IterationReport],
//!   "bugs_over_time": {"interval_seconds": float, "points": [TimeSeriesPoint]},
//!   "coverage": null | {"points": [{"elapsed_seconds", "percent"}], "final_percent"},
//!   "corpus": CorpusStats,
//!   "overlap": OverlapReport                       // only with two or more registries
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::{CampaignResult, IterationReport, TimelineEvent};
use crate::corpus::{corpus_stats, CorpusStats};
use crate::triage::{BugKey, KeyKind};

pub const DEFAULT_INTERVAL: Duration = Duration::from_secs(3600);
const MAX_OVERLAP_LABELS: usize = 16;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("elapsed time is zero")]
    ZeroElapsed,
    #[error("no tests were generated")]
    NoTests,
    #[error("malformed coverage csv {path} line {line}: {message}")]
    MalformedCsv { path: String, line: usize, message: String },
    #[error("overlap needs between 1 and {MAX_OVERLAP_LABELS} registries, got {0}")]
    OverlapArity(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSeriesPoint {
    pub elapsed_seconds: u64,
    pub cumulative_bugs: u64,
    pub cumulative_tests: u64,
}

/// Cumulative bugs and tests sampled at every `interval` up to `horizon`
/// (at least one sample).
pub fn bugs_over_time(events: &[TimelineEvent], interval: Duration, horizon: Duration) -> Vec<TimeSeriesPoint> {
    let interval_ms = interval.as_millis().max(1) as u64;
    let horizon_ms = horizon.as_millis() as u64;
    let samples = horizon_ms.div_ceil(interval_ms).max(1);
    let mut sorted: Vec<&TimelineEvent> = events.iter().collect();
    sorted.sort_by_key(|e| e.elapsed_ms);
    let mut next = 0;
    let (mut bugs, mut tests) = (0, 0);
    (1..=samples)
        .map(|k| {
            let t = k * interval_ms;
            while next < sorted.len() && sorted[next].elapsed_ms <= t {
                bugs += sorted[next].new_bugs;
                tests += sorted[next].tests;
                next += 1;
            }
            TimeSeriesPoint { elapsed_seconds: t / 1000, cumulative_bugs: bugs, cumulative_tests: tests }
        })
        .collect()
}

/// Generated programs per minute.
pub fn throughput(reports: &[IterationReport]) -> Result<f64, MetricsError> {
    let elapsed: Duration = reports.iter().map(|r| r.elapsed).sum();
    if elapsed.is_zero() {
        return Err(MetricsError::ZeroElapsed);
    }
    let tests: usize = reports.iter().map(|r| r.generated).sum();
    Ok(tests as f64 / (elapsed.as_secs_f64() / 60.0))
}

/// Fraction of generated programs that passed the pass-free compile.
pub fn validity_rate(reports: &[IterationReport]) -> Result<f64, MetricsError> {
    let generated: usize = reports.iter().map(|r| r.generated).sum();
    if generated == 0 {
        return Err(MetricsError::NoTests);
    }
    let valid: usize = reports.iter().map(|r| r.compile_valid).sum();
    Ok(valid as f64 / generated as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapRegion {
    /// The registries holding these keys, and no others.
    pub labels: Vec<String>,
    pub size: usize,
    /// Keys of kind Trace: matches across registries are less certain.
    pub trace_keys: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub a: String,
    pub b: String,
    pub shared: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub labels: Vec<String>,
    pub unique_bugs: BTreeMap<String, usize>,
    pub union: usize,
    pub pairwise: Vec<PairOverlap>,
    /// Every non-empty label subset, ordered by subset bitmask.
    pub exclusive: Vec<OverlapRegion>,
}

impl OverlapReport {
    pub fn region(&self, labels: &[&str]) -> Option<&OverlapRegion> {
        let mut want: Vec<&str> = labels.to_vec();
        want.sort_unstable();
        self.exclusive.iter().find(|r| {
            let mut have: Vec<&str> = r.labels.iter().map(String::as_str).collect();
            have.sort_unstable();
            have == want
        })
    }
}

/// Venn decomposition of bug-key sets by key equality.
pub fn overlap(registries: &BTreeMap<String, BTreeSet<BugKey>>) -> Result<OverlapReport, MetricsError> {
    let n = registries.len();
    if n == 0 || n > MAX_OVERLAP_LABELS {
        return Err(MetricsError::OverlapArity(n));
    }
    let labels: Vec<String> = registries.keys().cloned().collect();
    let mut membership: BTreeMap<&BugKey, u32> = BTreeMap::new();
    for (i, keys) in registries.values().enumerate() {
        for k in keys {
            *membership.entry(k).or_default() |= 1 << i;
        }
    }
    let mut exclusive: Vec<OverlapRegion> = (1u32..(1 << n))
        .map(|mask| OverlapRegion {
            labels: (0..n).filter(|i| mask & (1 << i) != 0).map(|i| labels[i].clone()).collect(),
            size: 0,
            trace_keys: 0,
        })
        .collect();
    for (key, mask) in &membership {
        let r = &mut exclusive[*mask as usize - 1];
        r.size += 1;
        if key.kind == KeyKind::Trace {
            r.trace_keys += 1;
        }
    }
    let sets: Vec<&BTreeSet<BugKey>> = registries.values().collect();
    let mut pairwise = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairwise.push(PairOverlap {
                a: labels[i].clone(),
                b: labels[j].clone(),
                shared: sets[i].intersection(sets[j]).count(),
            });
        }
    }
    Ok(OverlapReport {
        unique_bugs: registries.iter().map(|(l, s)| (l.clone(), s.len())).collect(),
        union: membership.len(),
        labels,
        pairwise,
        exclusive,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub elapsed_seconds: f64,
    pub percent: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageSeries {
    pub points: Vec<CoveragePoint>,
    pub final_percent: Option<f64>,
}

/// Reads a two-column `timestamp,percent` CSV (timestamp in seconds). A
/// leading header row is allowed.
pub fn ingest_coverage_summary(path: &Path) -> Result<CoverageSeries, MetricsError> {
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io { path: path.display().to_string(), source })?;
    parse_coverage(&text, &path.display().to_string())
}

pub fn parse_coverage(text: &str, origin: &str) -> Result<CoverageSeries, MetricsError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        let bad = |message: String| MetricsError::MalformedCsv { path: origin.to_string(), line, message };
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 2 {
            return Err(bad(format!("expected 2 columns, found {}", row.len())));
        }
        if line == 1 && row[0].eq_ignore_ascii_case("timestamp") {
            continue;
        }
        let t: f64 = row[0].parse().map_err(|_| bad(format!("bad timestamp {:?}", &row[0])))?;
        let p: f64 = row[1].parse().map_err(|_| bad(format!("bad percent {:?}", &row[1])))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(bad(format!("timestamp {t} out of range")));
        }
        if !(0.0..=100.0).contains(&p) {
            return Err(bad(format!("percent {p} out of range")));
        }
        points.push(CoveragePoint { elapsed_seconds: t, percent: p });
    }
    let final_percent = points.last().map(|p| p.percent);
    Ok(CoverageSeries { points, final_percent })
}

/// Everything `emit_report` needs about one campaign.
#[derive(Clone, Debug)]
pub struct ReportInput {
    pub label: String,
    pub reports: Vec<IterationReport>,
    pub timeline: Vec<TimelineEvent>,
    pub elapsed: Duration,
    /// Keys of the campaign's registry with their occurrence counts.
    pub bugs: Vec<(BugKey, usize)>,
    pub corpus: CorpusStats,
    pub coverage: Option<CoverageSeries>,
    /// Other registries to compare against, by label.
    pub compare: Vec<(String, BTreeSet<BugKey>)>,
    pub interval: Duration,
}

impl ReportInput {
    /// Input for a finished campaign, with no coverage and no comparisons.
    pub fn from_result(label: impl Into<String>, result: &CampaignResult, interval: Duration) -> Self {
        ReportInput {
            label: label.into(),
            reports: result.reports.clone(),
            timeline: result.timeline.clone(),
            elapsed: result.elapsed,
            bugs: result.registry.buckets().map(|(k, members)| (k.clone(), members.len())).collect(),
            corpus: corpus_stats(&result.corpus),
            coverage: None,
            compare: Vec::new(),
            interval,
        }
    }
}

#[derive(Serialize)]
struct Totals {
    generated: usize,
    compile_valid: usize,
    crashes: usize,
    timeouts: usize,
    distinct_bugs: usize,
    low_confidence_bugs: usize,
    programs_added: usize,
    transformed_added: usize,
}

#[derive(Serialize)]
struct Curve<'a> {
    interval_seconds: f64,
    points: &'a [TimeSeriesPoint],
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    label: &'a str,
    iterations: usize,
    elapsed_seconds: f64,
    totals: Totals,
    throughput_tests_per_minute: Option<f64>,
    validity_rate: Option<f64>,
    iteration_reports: &'a [IterationReport],
    bugs_over_time: Curve<'a>,
    coverage: Option<&'a CoverageSeries>,
    corpus: &'a CorpusStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    overlap: Option<&'a OverlapReport>,
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), MetricsError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report values serialize");
    out.push(b'\n');
    out
}

/// Writes `report.json`, `bugs_over_time.csv`, `overlap.json` and
/// `corpus_stats.json` into `dir`. Output is a pure function of `input`.
pub fn emit_report(input: &ReportInput, dir: &Path) -> Result<(), MetricsError> {
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io { path: dir.display().to_string(), source })?;
    let curve = bugs_over_time(&input.timeline, input.interval, input.elapsed);
    let sum = |f: fn(&IterationReport) -> usize| input.reports.iter().map(f).sum::<usize>();
    let totals = Totals {
        generated: sum(|r| r.generated),
        compile_valid: sum(|r| r.compile_valid),
        crashes: sum(|r| r.crashes),
        timeouts: sum(|r| r.timeouts),
        distinct_bugs: input.bugs.len(),
        low_confidence_bugs: input.bugs.iter().filter(|(k, _)| k.low_confidence).count(),
        programs_added: sum(|r| r.programs_added),
        transformed_added: sum(|r| r.transformed_added),
    };
    let mut sets: BTreeMap<String, BTreeSet<BugKey>> = input.compare.iter().cloned().collect();
    sets.insert(input.label.clone(), input.bugs.iter().map(|(k, _)| k.clone()).collect());
    let overlap_report = overlap(&sets)?;

    let report = Report {
        schema_version: 1,
        label: &input.label,
        iterations: input.reports.len(),
        elapsed_seconds: input.elapsed.as_secs_f64(),
        totals,
        throughput_tests_per_minute: throughput(&input.reports).ok(),
        validity_rate: validity_rate(&input.reports).ok(),
        iteration_reports: &input.reports,
        bugs_over_time: Curve { interval_seconds: input.interval.as_secs_f64(), points: &curve },
        coverage: input.coverage.as_ref(),
        corpus: &input.corpus,
        overlap: (sets.len() >= 2).then_some(&overlap_report),
    };
    write(dir, "report.json", pretty(&report))?;

    let mut csv = String::from("elapsed_seconds,cumulative_bugs,cumulative_tests\n");
    for p in &curve {
        csv.push_str(&format!("{},{},{}\n", p.elapsed_seconds, p.cumulative_bugs, p.cumulative_tests));
    }
    write(dir, "bugs_over_time.csv", csv)?;
    write(dir, "overlap.json", pretty(&overlap_report))?;
    write(dir, "corpus_stats.json", pretty(&input.corpus))?;
    Ok(())
}
