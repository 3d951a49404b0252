// SPDX-License-Identifier: Apache-2.0

mod common;

use std::fs;

use selfuzz_core::corpus::*;

#[test]
fn fixture_suite_is_large_enough() {
    let files = common::seed_files();
    assert!(files.len() >= 30, "only {} fixture files", files.len());
    assert!(files.iter().all(|f| f.unbalanced.is_none() && !f.units.is_empty()));
}

#[test]
fn tokenize_detokenize_fixed_point_on_fixtures() {
    for f in common::seed_files() {
        let text = fs::read_to_string(&f.path).unwrap();
        let tokens = tokenize(&text);
        let canonical = detokenize(&tokens);
        assert_eq!(tokenize(&canonical), tokens, "{}", f.path.display());
        assert_eq!(detokenize(&tokenize(&canonical)), canonical, "{}", f.path.display());
        for u in &f.units {
            assert_eq!(tokenize(&u.source), *u.program.tokens(), "{} unit {}", f.path.display(), u.program.id());
            assert_eq!(u.program.text(), detokenize(u.program.tokens()));
            assert_eq!(&text[u.byte_range.clone()], u.source);
        }
    }
}

#[test]
fn no_token_spans_a_line_break() {
    for p in common::all_seeds() {
        for t in p.tokens() {
            assert!(t.is_newline() || !t.as_str().contains('\n'), "{:?} in {}", t.as_str(), p.id());
        }
    }
}

#[test]
fn hand_counted_seed_suite() {
    let files = split_seed_dir(&common::fixtures().join("seed_suite")).unwrap();
    let ids: Vec<String> = files.iter().flat_map(|f| f.units.iter().map(|u| u.program.id().to_string())).collect();
    assert_eq!(ids, ["a.0", "a.1", "b.0", "b.1", "b.2", "nested.c.0", "nested.c.1"]);
    let c = &files[2].units;
    assert!(c[0].source.starts_with("module @outer {") && c[0].source.ends_with("}\n}"));
    assert!(c[1].source.contains("\"braces { in } strings\""));
}

#[test]
fn seed_layout_is_idempotent() {
    let units: Vec<SeedUnit> = split_seed_dir(&common::fixtures().join("seed_suite"))
        .unwrap()
        .into_iter()
        .flat_map(|f| f.units)
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let write = || write_corpus_dir(dir.path(), units.iter().map(|u| (&u.program, Some(u.source.as_str())))).unwrap();
    assert_eq!(write(), 7);
    let manifest = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(write(), 0);
    assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), manifest);
    let store = load_corpus_dir(dir.path()).unwrap();
    assert_eq!(store.len(), 7);
    for (u, p) in units.iter().zip(store.entries()) {
        assert_eq!(u.program.content_hash(), p.content_hash());
        assert_eq!(p.provenance(), Provenance::Seed);
    }
}

#[test]
fn empty_seed_dir() {
    let dir = tempfile::tempdir().unwrap();
    assert!(split_seed_dir(dir.path()).unwrap().is_empty());
    assert!(split_seed_dir(&dir.path().join("missing")).is_err());
}

#[test]
fn fixture_statistics() {
    let seeds = common::all_seeds();
    let stats = corpus_stats(&common::store(&seeds));
    assert_eq!(stats.file_count, seeds.len());
    assert_eq!(stats.seed_count, seeds.len());
    let mean = seeds.iter().map(|p| p.tokens().len()).sum::<usize>() as f64 / seeds.len() as f64;
    assert!((stats.avg_tokens_per_file - mean).abs() <= 0.005);
}

#[test]
fn seed_sampling_uses_everything_below_the_cap() {
    let store = common::store(&common::all_seeds());
    let all = sample_fuzz_seeds(&store, 35_000, 1).unwrap();
    assert_eq!(all.len(), store.len());
    let a = sample_fuzz_seeds(&store, 10, 9).unwrap();
    let b = sample_fuzz_seeds(&store, 10, 9).unwrap();
    assert_eq!(a.iter().map(|p| p.id()).collect::<Vec<_>>(), b.iter().map(|p| p.id()).collect::<Vec<_>>());
}
