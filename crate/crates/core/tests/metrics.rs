// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use selfuzz_core::campaign::{run_campaign, CampaignConfig, IterationReport, TimelineEvent};
use selfuzz_core::corpus::{corpus_stats, CorpusStore};
use selfuzz_core::harness::{Fault, FaultlineCompiler, FaultlineSpec};
use selfuzz_core::metrics::*;
use selfuzz_core::triage::{BugKey, KeyKind};

fn report(generated: usize, valid: usize, minutes: f64) -> IterationReport {
    IterationReport {
        iteration: 1,
        seeds_sampled: 0,
        skipped_seeds: 0,
        generated,
        compile_valid: valid,
        crashes: 0,
        new_bugs: 0,
        timeouts: 0,
        programs_added: 0,
        transformed_added: 0,
        corpus_size: 0,
        heldout_nll: None,
        truncated: false,
        elapsed: Duration::from_secs_f64(minutes * 60.0),
    }
}

fn key(kind: KeyKind, v: &str) -> BugKey {
    BugKey { kind, value: v.into(), low_confidence: false }
}

fn keys(vs: &[&str]) -> BTreeSet<BugKey> {
    vs.iter().map(|v| key(KeyKind::Assertion, v)).collect()
}

#[test]
fn throughput_fixtures() {
    assert!((throughput(&[report(1380, 0, 100.0)]).unwrap() - 13.8).abs() < 1e-12);
    assert_eq!(throughput(&[report(0, 0, 5.0)]).unwrap(), 0.0);
    let two = [report(60, 0, 6.0), report(40, 0, 4.0)];
    assert!((throughput(&two).unwrap() - 10.0).abs() < 1e-12);
    assert!(matches!(throughput(&[report(10, 0, 0.0)]), Err(MetricsError::ZeroElapsed)));
    assert!(matches!(throughput(&[]), Err(MetricsError::ZeroElapsed)));
}

#[test]
fn validity_fixtures() {
    assert_eq!(validity_rate(&[report(7, 7, 1.0)]).unwrap(), 1.0);
    assert!((validity_rate(&[report(10_000, 6932, 1.0)]).unwrap() - 0.6932).abs() < 1e-12);
    assert_eq!(validity_rate(&[report(5, 0, 1.0)]).unwrap(), 0.0);
    assert!(matches!(validity_rate(&[report(0, 0, 1.0)]), Err(MetricsError::NoTests)));
}

#[test]
fn overlap_fixtures() {
    let same: BTreeMap<String, BTreeSet<BugKey>> =
        [("a".to_string(), keys(&["k1", "k2"])), ("b".to_string(), keys(&["k1", "k2"]))].into();
    let r = overlap(&same).unwrap();
    assert_eq!(r.region(&["a", "b"]).unwrap().size, 2);
    assert_eq!(r.region(&["a"]).unwrap().size, 0);
    assert_eq!(r.region(&["b"]).unwrap().size, 0);

    let disjoint: BTreeMap<String, BTreeSet<BugKey>> =
        [("a".to_string(), keys(&["k1", "k2"])), ("b".to_string(), keys(&["k3", "k4", "k5"]))].into();
    let r = overlap(&disjoint).unwrap();
    assert_eq!((r.region(&["a"]).unwrap().size, r.region(&["b"]).unwrap().size), (2, 3));
    assert_eq!(r.region(&["a", "b"]).unwrap().size, 0);
    assert_eq!(r.pairwise[0].shared, 0);

    let nested: BTreeMap<String, BTreeSet<BugKey>> =
        [("A".to_string(), keys(&["k1", "k2", "k3"])), ("B".to_string(), keys(&["k2"]))].into();
    let r = overlap(&nested).unwrap();
    assert_eq!(r.region(&["A"]).unwrap().size, 2);
    assert_eq!(r.region(&["A", "B"]).unwrap().size, 1);
    assert_eq!(r.region(&["B"]).unwrap().size, 0);
    assert_eq!((r.union, r.unique_bugs["A"], r.unique_bugs["B"]), (3, 3, 1));

    assert!(matches!(overlap(&BTreeMap::new()), Err(MetricsError::OverlapArity(0))));
}

#[test]
fn trace_keys_are_flagged_per_region() {
    let mut a = keys(&["k1"]);
    a.insert(key(KeyKind::Trace, "mlir::A\nmlir::B"));
    let b: BTreeSet<BugKey> = [key(KeyKind::Trace, "mlir::A\nmlir::B")].into();
    let r = overlap(&[("a".to_string(), a), ("b".to_string(), b)].into()).unwrap();
    assert_eq!(r.region(&["a", "b"]).unwrap().trace_keys, 1);
    assert_eq!(r.region(&["a"]).unwrap().trace_keys, 0);
}

fn key_sets(n: usize) -> impl Strategy<Value = Vec<BTreeSet<u8>>> {
    proptest::collection::vec(proptest::collection::btree_set(0u8..24, 0..16), n)
}

proptest! {
    #[test]
    fn regions_partition_the_union(sets in key_sets(3)) {
        let labelled: BTreeMap<String, BTreeSet<BugKey>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("r{i}"), s.iter().map(|k| key(KeyKind::Assertion, &format!("k{k}"))).collect()))
            .collect();
        let r = overlap(&labelled).unwrap();
        prop_assert_eq!(r.exclusive.len(), 7);
        let union: BTreeSet<u8> = sets.iter().flatten().copied().collect();
        prop_assert_eq!(r.exclusive.iter().map(|x| x.size).sum::<usize>(), union.len());
        prop_assert_eq!(r.union, union.len());
        // Brute-force oracle for every region.
        for region in &r.exclusive {
            let inside: Vec<usize> = region.labels.iter().map(|l| l[1..].parse().unwrap()).collect();
            let expect = union
                .iter()
                .filter(|k| (0..3).all(|i| sets[i].contains(k) == inside.contains(&i)))
                .count();
            prop_assert_eq!(region.size, expect);
        }
    }

    #[test]
    fn curves_are_monotone(events in proptest::collection::vec((0u64..50_000, 0u64..20, 0u64..3), 0..40)) {
        let events: Vec<TimelineEvent> = events
            .into_iter()
            .map(|(ms, tests, bugs)| TimelineEvent { iteration: 1, elapsed_ms: ms, tests, new_bugs: bugs })
            .collect();
        let curve = bugs_over_time(&events, Duration::from_secs(5), Duration::from_secs(50));
        prop_assert_eq!(curve.len(), 10);
        for w in curve.windows(2) {
            prop_assert!(w[0].cumulative_bugs <= w[1].cumulative_bugs);
            prop_assert!(w[0].cumulative_tests <= w[1].cumulative_tests);
        }
        let total: u64 = events.iter().map(|e| e.new_bugs).sum();
        prop_assert_eq!(curve.last().unwrap().cumulative_bugs, total);
    }
}

#[test]
fn coverage_curve_ingestion() {
    let series = ingest_coverage_summary(&common::fixtures().join("coverage/curve_24h.csv")).unwrap();
    assert_eq!(series.points.len(), 5);
    assert_eq!(series.points[0], CoveragePoint { elapsed_seconds: 3600.0, percent: 18.0 });
    // 77,105 covered lines of 273,187.
    let headline = 77_105.0 / 273_187.0 * 100.0;
    assert!((series.final_percent.unwrap() - headline).abs() < 0.005);

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert!(ingest_coverage_summary(&empty).unwrap().points.is_empty());
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "3600,18.0\n7200\n").unwrap();
    match ingest_coverage_summary(&bad) {
        Err(MetricsError::MalformedCsv { line, path, .. }) => {
            assert_eq!(line, 2);
            assert!(path.ends_with("bad.csv"));
        }
        other => panic!("expected MalformedCsv, got {other:?}"),
    }
}

fn empty_input() -> ReportInput {
    ReportInput {
        label: "empty".into(),
        reports: vec![],
        timeline: vec![],
        elapsed: Duration::ZERO,
        bugs: vec![],
        corpus: corpus_stats(&CorpusStore::new()),
        coverage: None,
        compare: vec![],
        interval: DEFAULT_INTERVAL,
    }
}

#[test]
fn empty_campaign_report() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&empty_input(), dir.path()).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["totals"]["generated"], 0);
    assert_eq!(report["totals"]["distinct_bugs"], 0);
    assert!(report["throughput_tests_per_minute"].is_null());
    assert!(report.get("overlap").is_none());
    let csv = fs::read_to_string(dir.path().join("bugs_over_time.csv")).unwrap();
    assert_eq!(csv, "elapsed_seconds,cumulative_bugs,cumulative_tests\n3600,0,0\n");
    for f in ["overlap.json", "corpus_stats.json"] {
        let _: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(f)).unwrap()).unwrap();
    }
}

#[test]
fn compare_adds_overlap_section() {
    let dir = tempfile::tempdir().unwrap();
    let mut input = empty_input();
    input.bugs = vec![(key(KeyKind::Assertion, "k1"), 3)];
    input.compare = vec![("other".into(), keys(&["k1", "k2"]))];
    emit_report(&input, dir.path()).unwrap();
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["overlap"]["pairwise"][0]["shared"], 1);
    assert_eq!(report["overlap"]["union"], 2);
}

fn campaign_input() -> ReportInput {
    let seeds = common::seeds(10);
    let spec = FaultlineSpec {
        grammar_keywords: vec!["func.func".into(), "module".into()],
        faults: vec![Fault { pass: Some("-canonicalize".into()), trigger_token: "arith.constant".into(), crash_signature: "m != nullptr".into() }],
        ..Default::default()
    };
    let cfg = CampaignConfig { max_iterations: 2, max_seed_samples: 10, rng_seed: 3, ..Default::default() };
    let result = run_campaign(cfg, seeds, Arc::new(FaultlineCompiler::new(spec).unwrap()), common::passes(), common::ngram()).unwrap();
    ReportInput {
        label: "fixture".into(),
        bugs: result.registry.buckets().map(|(k, recs)| (k.clone(), recs.len())).collect(),
        corpus: corpus_stats(&result.corpus),
        coverage: None,
        compare: vec![],
        interval: Duration::from_secs(1),
        elapsed: result.elapsed,
        reports: result.reports,
        timeline: result.timeline,
    }
}

#[test]
fn campaign_curve_matches_event_replay() {
    let input = campaign_input();
    assert!(!input.bugs.is_empty());
    let curve = bugs_over_time(&input.timeline, input.interval, input.elapsed);
    for p in &curve {
        let t = p.elapsed_seconds * 1000;
        let seen: Vec<&TimelineEvent> = input.timeline.iter().filter(|e| e.elapsed_ms <= t).collect();
        assert_eq!(p.cumulative_bugs, seen.iter().map(|e| e.new_bugs).sum::<u64>());
        assert_eq!(p.cumulative_tests, seen.iter().map(|e| e.tests).sum::<u64>());
    }
    let last = curve.last().unwrap();
    assert_eq!(last.cumulative_bugs as usize, input.bugs.len());
    assert_eq!(last.cumulative_tests as usize, input.reports.iter().map(|r| r.generated).sum::<usize>());
}

#[test]
fn report_is_a_pure_function_of_its_input() {
    let input = campaign_input();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&input, a.path()).unwrap();
    emit_report(&input, b.path()).unwrap();
    emit_report(&input, b.path()).unwrap();
    for f in ["report.json", "bugs_over_time.csv", "overlap.json", "corpus_stats.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // A second campaign with the same inputs gives the same bytes.
    let c = tempfile::tempdir().unwrap();
    emit_report(&campaign_input(), c.path()).unwrap();
    assert_eq!(fs::read(a.path().join("report.json")).unwrap(), fs::read(c.path().join("report.json")).unwrap());
}
