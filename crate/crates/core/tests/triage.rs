// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::sync::Arc;

use chrono::DateTime;
use common::dedup::{fixtures, Flavor};
use proptest::prelude::*;
use selfuzz_core::campaign::{run_campaign, CampaignConfig};
use selfuzz_core::corpus::{ProgramId, TestProgram};
use selfuzz_core::harness::{Fault, FaultlineCompiler, FaultlineSpec, GenOptions};
use selfuzz_core::triage::*;

fn record(i: usize, stderr: &str) -> CrashRecord {
    CrashRecord {
        program_id: ProgramId::new(format!("p{i}")),
        pass_flag: "-x".into(),
        bug_key: bug_key_or_catch_all(stderr, &DEFAULT_FRAME_PREFIXES),
        stderr: stderr.into(),
        first_seen: DateTime::UNIX_EPOCH,
        iteration: 1,
        program_text: "func.func @f() { }".into(),
    }
}

#[test]
fn synthetic_fixtures_bucket_by_root_cause() {
    let fx = fixtures(500, 2024);
    let mut reg = BugRegistry::new();
    for (i, f) in fx.iter().enumerate() {
        reg.register_crash(record(i, &f.stderr)).unwrap();
    }
    let truth: BTreeSet<&str> = fx.iter().map(|f| f.class.as_str()).collect();
    assert_eq!(reg.bug_count(), truth.len());

    // Same partition, not just the same count.
    let mut class_of_key: HashMap<&BugKey, &str> = HashMap::new();
    for (rec, f) in reg.records().iter().zip(&fx) {
        let prev = class_of_key.insert(&rec.bug_key, f.class.as_str());
        assert!(prev.is_none_or(|c| c == f.class), "key {:?} mixes {prev:?} and {}", rec.bug_key, f.class);
    }

    let flavors: BTreeMap<String, usize> = fx.iter().fold(BTreeMap::new(), |mut m, f| {
        *m.entry(format!("{:?}", f.flavor)).or_default() += 1;
        m
    });
    assert_eq!(flavors.len(), 4, "{flavors:?}");
}

#[test]
fn assertion_takes_precedence_in_mixed_reports() {
    for f in fixtures(500, 7).iter().filter(|f| f.flavor == Flavor::Mixed) {
        let key = extract_bug_key(&f.stderr, &DEFAULT_FRAME_PREFIXES).unwrap();
        assert_eq!(key.kind, KeyKind::Assertion);
        assert_eq!(Some(&key.value), f.assertion.as_ref());
    }
}

#[test]
fn key_kinds_follow_the_signal() {
    for f in fixtures(300, 99) {
        let key = bug_key_or_catch_all(&f.stderr, &DEFAULT_FRAME_PREFIXES);
        match f.flavor {
            Flavor::Assertion | Flavor::Mixed => assert_eq!(key.kind, KeyKind::Assertion),
            Flavor::TraceOnly => {
                assert_eq!(key.kind, KeyKind::Trace);
                assert!(!key.low_confidence);
                assert!(key.value.lines().all(|l| l.starts_with("mlir::")));
            }
            Flavor::SignalOnly => {
                assert!(matches!(extract_bug_key(&f.stderr, &DEFAULT_FRAME_PREFIXES), Err(TriageError::NoSignal)));
                assert!(key.low_confidence);
            }
        }
    }
}

#[test]
fn hand_applied_rules() {
    let a = "x.cpp:12: f(): Assertion `m != nullptr' failed.";
    let b = "y.cpp:900: f(): Assertion `m  !=  nullptr' failed.";
    assert_eq!(extract_bug_key(a, &DEFAULT_FRAME_PREFIXES).unwrap(), extract_bug_key(b, &DEFAULT_FRAME_PREFIXES).unwrap());
    let t = " #0 0x1 mlir::foo()\n #1 0x2 llvm::bar()\n #2 0x3 mlir::baz()\n";
    let k = extract_bug_key(t, &DEFAULT_FRAME_PREFIXES).unwrap();
    assert_eq!((k.kind, k.value.as_str()), (KeyKind::Trace, "mlir::foo()\nmlir::baz()"));
    assert!(matches!(extract_bug_key("Segmentation fault", &DEFAULT_FRAME_PREFIXES), Err(TriageError::NoSignal)));
    assert_eq!(catch_all_key("Segmentation fault").value, "Segmentation fault");
}

#[test]
fn registry_examples() {
    let same = "Assertion 'idx < size()' failed";
    let mut reg = BugRegistry::new();
    assert!(reg.register_crash(record(0, same)).unwrap());
    assert!(!reg.register_crash(record(1, same)).unwrap());
    assert_eq!((reg.bug_count(), reg.record_count()), (1, 2));
    assert!(reg.register_crash(record(2, "Assertion 'other' failed")).unwrap());
    assert_eq!(reg.bug_count(), 2);
    assert!(matches!(reg.register_crash(record(2, same)), Err(TriageError::DuplicateOccurrence { .. })));
}

#[test]
fn export_bundle() {
    let mut reg = BugRegistry::new();
    for (i, s) in ["Assertion 'a' failed", "Assertion 'b' failed", "Assertion 'a' failed", " #0 0x1 mlir::Z()"].iter().enumerate() {
        reg.register_crash(record(i, s)).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let index = export_registry(&reg, dir.path()).unwrap();
    assert_eq!(index.len(), 3);
    assert_eq!(index.iter().map(|e| e.occurrences).collect::<Vec<_>>(), [2, 1, 1]);
    let lines = fs::read_to_string(dir.path().join(BUG_INDEX_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 3);
    for e in &index {
        assert!(dir.path().join(&e.reproducer_path).is_file());
        let key = fs::read_to_string(dir.path().join(format!("bug-{:04}/key.txt", e.bug_id))).unwrap();
        assert_eq!(key, format!("{:?}\n{}\n", e.key_kind, e.key_value));
    }
    let before = fs::read(dir.path().join(BUG_INDEX_FILE)).unwrap();
    export_registry(&reg, dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join(BUG_INDEX_FILE)).unwrap(), before);
}

fn small_campaign(spec: FaultlineSpec, seeds: Vec<TestProgram>, rng_seed: u64, iterations: u32) -> BugRegistry {
    let cfg = CampaignConfig { max_iterations: iterations, max_seed_samples: 40, rng_seed, ..Default::default() };
    run_campaign(cfg, seeds, Arc::new(FaultlineCompiler::new(spec).unwrap()), common::passes(), common::ngram())
        .unwrap()
        .registry
}

#[test]
fn seven_triggered_signatures_give_seven_bugs() {
    let seeds = common::seeds(20);
    let passes = common::passes();
    // Triggers are the leading keyword, so every valid program fires them.
    let faults = (0..7)
        .map(|i| Fault {
            pass: Some(passes[i * 30].flag.clone()),
            trigger_token: "func.func".into(),
            crash_signature: format!("m != nullptr && \"fault {i}\""),
        })
        .collect();
    let spec = FaultlineSpec { grammar_keywords: vec!["func.func".into(), "module".into()], faults, ..Default::default() };
    let reg = small_campaign(spec.clone(), seeds, 1, 1);
    assert_eq!(reg.bug_count(), 7);
    let keys: BTreeSet<&str> = reg.keys().map(|k| k.value.as_str()).collect();
    assert_eq!(keys, spec.signatures().into_iter().collect());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Buckets equal the distinct signatures that actually fired.
    #[test]
    fn bucket_count_is_exact(rng_seed in 0u64..1000, faults in 1usize..10) {
        let seeds = common::seeds(12);
        let refs: Vec<&TestProgram> = seeds.iter().collect();
        let passes = common::passes();
        let opts = GenOptions { faults, rewrites: 4, latent: faults / 3, ..Default::default() };
        let spec = FaultlineSpec::generate(&refs, &passes, &opts, rng_seed);
        let reg = small_campaign(spec.clone(), seeds, rng_seed, 2);

        // Replay every registered program through the spec directly.
        let mut fired = BTreeSet::new();
        for rec in reg.records() {
            let o = selfuzz_core::harness::faultline_compile(&spec, &rec.program_text, Some(&rec.pass_flag));
            let f = spec.faults.iter().find(|f| f.pass.as_deref() == Some(rec.pass_flag.as_str())).unwrap();
            prop_assert!(o.stderr.contains(&f.crash_signature));
            fired.insert(f.crash_signature.clone());
        }
        let keys: BTreeSet<String> = reg.keys().map(|k| k.value.clone()).collect();
        prop_assert_eq!(reg.bug_count(), fired.len());
        prop_assert_eq!(keys, fired);
    }
}
