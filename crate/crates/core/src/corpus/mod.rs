// SPDX-License-Identifier: Apache-2.0

//! Test programs and the training/seed corpus they live in.

mod layout;
mod split;
mod token;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use layout::{load_corpus_dir, split_seed_dir, write_corpus_dir, ManifestEntry, SeedFile, MANIFEST_FILE};
pub use split::{split_seed_file, SeedUnit, SplitReport, UnbalancedDelimiters};
pub use token::{detokenize, tokenize, Token, NEWLINE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("program has no tokens")]
    EmptyProgram,
    #[error("provenance {provenance:?} is inconsistent with iteration {iteration} / parent {parent:?}")]
    InconsistentProvenance {
        provenance: Provenance,
        iteration: u32,
        parent: Option<ProgramId>,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path} line {line}: {message}")]
    MalformedManifest {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProgramId(String);

impl ProgramId {
    pub fn new(id: impl Into<String>) -> Self {
        ProgramId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ProgramId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    Seed,
    Generated,
    Transformed,
}

impl Provenance {
    pub fn dir_name(self) -> &'static str {
        match self {
            Provenance::Seed => "seed",
            Provenance::Generated => "generated",
            Provenance::Transformed => "transformed",
        }
    }
}

/// SHA-256 of a program's canonical text.
pub type ContentHash = [u8; 32];

pub fn content_hash(text: &str) -> ContentHash {
    Sha256::digest(text.as_bytes()).into()
}

/// A program flowing through the fuzzing loop: tokens, their rendered text,
/// and where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestProgram {
    id: ProgramId,
    tokens: Vec<Token>,
    text: String,
    provenance: Provenance,
    origin_iteration: u32,
    parent_id: Option<ProgramId>,
    hash: ContentHash,
}

impl TestProgram {
    pub fn new(
        id: ProgramId,
        tokens: Vec<Token>,
        provenance: Provenance,
        origin_iteration: u32,
        parent_id: Option<ProgramId>,
    ) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptyProgram);
        }
        let is_seed = provenance == Provenance::Seed;
        if is_seed != (origin_iteration == 0 && parent_id.is_none()) {
            return Err(CorpusError::InconsistentProvenance {
                provenance,
                iteration: origin_iteration,
                parent: parent_id,
            });
        }
        let text = detokenize(&tokens);
        let hash = content_hash(&text);
        Ok(TestProgram {
            id,
            tokens,
            text,
            provenance,
            origin_iteration,
            parent_id,
            hash,
        })
    }

    pub fn seed(id: ProgramId, tokens: Vec<Token>) -> Result<Self, CorpusError> {
        Self::new(id, tokens, Provenance::Seed, 0, None)
    }

    /// Tokenizes `text` and wraps it.
    pub fn from_text(
        id: ProgramId,
        text: &str,
        provenance: Provenance,
        origin_iteration: u32,
        parent_id: Option<ProgramId>,
    ) -> Result<Self, CorpusError> {
        Self::new(id, tokenize(text), provenance, origin_iteration, parent_id)
    }

    pub fn id(&self) -> &ProgramId {
        &self.id
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn origin_iteration(&self) -> u32 {
        self.origin_iteration
    }

    pub fn parent_id(&self) -> Option<&ProgramId> {
        self.parent_id.as_ref()
    }

    pub fn content_hash(&self) -> &ContentHash {
        &self.hash
    }
}

/// Programs keyed by id with exact-duplicate suppression on content.
///
/// Entries are append-only; insertion order is preserved and is what
/// [`sample_fuzz_seeds`] indexes into.
#[derive(Clone, Debug, Default)]
pub struct CorpusStore {
    entries: Vec<Arc<TestProgram>>,
    by_id: HashMap<ProgramId, usize>,
    content_index: HashSet<ContentHash>,
}

impl CorpusStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Arc<TestProgram>] {
        &self.entries
    }

    pub fn get(&self, id: &ProgramId) -> Option<&Arc<TestProgram>> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.content_index.contains(&content_hash(text))
    }

    /// Inserts `program` unless its content (or id) is already present.
    pub fn add_program(&mut self, program: TestProgram) -> bool {
        self.add_shared(Arc::new(program))
    }

    pub fn add_shared(&mut self, program: Arc<TestProgram>) -> bool {
        if self.content_index.contains(program.content_hash()) {
            return false;
        }
        if self.by_id.contains_key(program.id()) {
            log::warn!("id {} already present with different content; skipped", program.id());
            return false;
        }
        self.content_index.insert(*program.content_hash());
        self.by_id.insert(program.id().clone(), self.entries.len());
        self.entries.push(program);
        true
    }
}

/// Draws `min(|store|, max_samples)` distinct programs uniformly without
/// replacement.
pub fn sample_fuzz_seeds(
    store: &CorpusStore,
    max_samples: usize,
    rng_seed: u64,
) -> Result<Vec<Arc<TestProgram>>, CorpusError> {
    if max_samples == 0 {
        return Err(CorpusError::ZeroSampleSize);
    }
    if store.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let amount = max_samples.min(store.len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(index::sample(&mut rng, store.len(), amount)
        .into_iter()
        .map(|i| Arc::clone(&store.entries[i]))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub file_count: usize,
    /// Mean tokens per program, rounded to two decimals.
    pub avg_tokens_per_file: f64,
    pub seed_count: usize,
    pub generated_count: usize,
    pub transformed_count: usize,
}

pub fn corpus_stats(store: &CorpusStore) -> CorpusStats {
    let file_count = store.len();
    let total: usize = store.entries.iter().map(|p| p.tokens.len()).sum();
    let mean = if file_count == 0 { 0.0 } else { total as f64 / file_count as f64 };
    let count = |prov| store.entries.iter().filter(|p| p.provenance == prov).count();
    CorpusStats {
        file_count,
        avg_tokens_per_file: (mean * 100.0).round() / 100.0,
        seed_count: count(Provenance::Seed),
        generated_count: count(Provenance::Generated),
        transformed_count: count(Provenance::Transformed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(id: &str, text: &str) -> TestProgram {
        TestProgram::from_text(ProgramId::new(id), text, Provenance::Seed, 0, None).unwrap()
    }

    fn store_of(n: usize) -> CorpusStore {
        let mut store = CorpusStore::new();
        for i in 0..n {
            assert!(store.add_program(prog(&format!("p{i}"), &format!("func.func @f{i}() {{ }}"))));
        }
        store
    }

    #[test]
    fn provenance_invariant() {
        let toks = tokenize("a");
        assert!(TestProgram::new(ProgramId::new("x"), toks.clone(), Provenance::Seed, 1, None).is_err());
        assert!(TestProgram::new(
            ProgramId::new("x"),
            toks.clone(),
            Provenance::Generated,
            0,
            None
        )
        .is_err());
        assert!(TestProgram::new(
            ProgramId::new("x"),
            toks,
            Provenance::Generated,
            1,
            Some(ProgramId::new("p"))
        )
        .is_ok());
        assert!(matches!(
            TestProgram::seed(ProgramId::new("x"), vec![]),
            Err(CorpusError::EmptyProgram)
        ));
    }

    #[test]
    fn add_program_set_semantics() {
        let mut store = CorpusStore::new();
        assert!(store.add_program(prog("a", "x y z")));
        assert_eq!(store.len(), 1);
        assert!(!store.add_program(prog("b", "x y z")));
        assert_eq!(store.len(), 1);
        assert!(store.add_program(prog("c", "x y w")));
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn sampling_min_rule_and_determinism() {
        let small = store_of(3);
        assert_eq!(sample_fuzz_seeds(&small, 10, 1).unwrap().len(), 3);
        let big = store_of(100);
        assert_eq!(sample_fuzz_seeds(&big, 35_000, 7).unwrap().len(), 100);
        let a: Vec<_> = sample_fuzz_seeds(&big, 10, 42).unwrap().iter().map(|p| p.id().clone()).collect();
        let b: Vec<_> = sample_fuzz_seeds(&big, 10, 42).unwrap().iter().map(|p| p.id().clone()).collect();
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 10);
        assert!(matches!(sample_fuzz_seeds(&CorpusStore::new(), 1, 0), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn sampling_is_uniform() {
        let store = store_of(10);
        let mut counts = HashMap::new();
        for seed in 0..10_000u64 {
            let pick = sample_fuzz_seeds(&store, 1, seed).unwrap();
            *counts.entry(pick[0].id().clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        for (_, c) in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.1).abs() <= 0.05, "frequency {freq}");
        }
    }

    #[test]
    fn stats() {
        let empty = corpus_stats(&CorpusStore::new());
        assert_eq!(empty.file_count, 0);
        assert_eq!(empty.avg_tokens_per_file, 0.0);

        let mut store = CorpusStore::new();
        let words = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        store.add_program(prog("a", &words(100)));
        store.add_program(prog("b", &words(200)));
        let stats = corpus_stats(&store);
        assert_eq!(stats.file_count, 2);
        assert_eq!(stats.avg_tokens_per_file, 150.0);
    }

    proptest::proptest! {
        #[test]
        fn dedup_counts_distinct_hashes(texts in proptest::collection::vec("[ab]{1,3}", 0..40)) {
            let mut store = CorpusStore::new();
            let mut distinct = HashSet::new();
            for (i, t) in texts.iter().enumerate() {
                let p = prog(&format!("p{i}"), t);
                distinct.insert(*p.content_hash());
                store.add_program(p);
            }
            proptest::prop_assert_eq!(store.len(), distinct.len());
            for p in store.entries() {
                proptest::prop_assert_eq!(tokenize(&detokenize(p.tokens())), p.tokens().to_vec());
            }
        }
    }
}
