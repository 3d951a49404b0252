// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

pub mod dedup;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use selfuzz_core::corpus::{split_seed_dir, CorpusStore, SeedFile, TestProgram};
use selfuzz_core::generator::{GeneratorBackend, NGramModel, TokenDistribution, DEFAULT_ORDER};
use selfuzz_core::harness::{load_pass_list, PassSpec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn seed_files() -> Vec<SeedFile> {
    split_seed_dir(&fixtures().join("mlir")).expect("fixture corpus splits")
}

/// Every function of the shipped fixture suite, in file order.
pub fn all_seeds() -> Vec<TestProgram> {
    seed_files().into_iter().flat_map(|f| f.units).map(|u| u.program).collect()
}

/// `n` seeds spread evenly over the fixture suite.
pub fn seeds(n: usize) -> Vec<TestProgram> {
    let all = all_seeds();
    assert!(all.len() >= n, "fixture suite has only {} functions", all.len());
    (0..n).map(|i| all[i * all.len() / n].clone()).collect()
}

pub fn passes() -> Vec<PassSpec> {
    load_pass_list(&fixtures().join("passes.txt")).expect("shipped pass list loads")
}

pub fn ngram() -> Arc<dyn GeneratorBackend> {
    Arc::new(NGramModel::new(DEFAULT_ORDER).unwrap())
}

pub fn store(programs: &[TestProgram]) -> CorpusStore {
    let mut s = CorpusStore::new();
    for p in programs {
        s.add_program(p.clone());
    }
    s
}

/// Pearson statistic of `observed` against `dist`, cells with expected
/// count below 5 pooled. Returns the upper-tail p-value.
pub fn chi_square_p(dist: &TokenDistribution, observed: &HashMap<String, u64>, n: u64) -> f64 {
    let mut stat = 0.0;
    let mut cells = 0;
    let (mut pooled_e, mut pooled_o) = (0.0, 0.0);
    for (t, &p) in dist.tokens.iter().zip(&dist.probs) {
        let e = p * n as f64;
        let o = *observed.get(t.as_str()).unwrap_or(&0) as f64;
        if e < 5.0 {
            pooled_e += e;
            pooled_o += o;
        } else {
            stat += (o - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_e > 0.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e;
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}
