// SPDX-License-Identifier: Apache-2.0

//! Interpolated n-gram language model over lexical tokens.
//!
//! Every context length `k` in `0..order` contributes a maximum-likelihood
//! distribution; unseen contexts fall back to the next shorter one. The
//! components are mixed with weights `λ_k` fitted by EM on a held-out split
//! (one EM round per training epoch), and the mixture is blended with a
//! uniform floor so that no vocabulary token ever has zero probability:
//!
//! ```text
//! P(w | h) = (1 - εV) · Σ_k λ_k P_k(w | h) + ε
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Capabilities, GeneratorBackend, GeneratorError, TokenDistribution, TrainOutcome, EOS};
use crate::corpus::{TestProgram, Token};

pub const DEFAULT_ORDER: usize = 4;
/// Contexts are packed into a `u128`, four 32-bit ids at most.
pub const MAX_ORDER: usize = 5;

const BOS_ID: u32 = u32::MAX;
const UNK_ID: u32 = u32::MAX - 1;
const BOS_TEXT: &str = "<s>";
const FLOOR: f64 = 1e-6;
const HELDOUT_FRACTION: f64 = 0.1;
const SNAPSHOT_FORMAT: &str = "selfuzz-ngram";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
struct ContextCounts {
    total: u64,
    /// Successor token ids, ascending.
    next: Vec<u32>,
    /// Running count sums aligned with `next`.
    cum: Vec<u64>,
}

impl ContextCounts {
    fn from_counts(counts: HashMap<u32, u64>) -> Self {
        let mut pairs: Vec<(u32, u64)> = counts.into_iter().collect();
        pairs.sort_unstable();
        let mut cum = Vec::with_capacity(pairs.len());
        let mut total = 0;
        for &(_, c) in &pairs {
            total += c;
            cum.push(total);
        }
        ContextCounts { total, next: pairs.into_iter().map(|(t, _)| t).collect(), cum }
    }

    fn count(&self, tok: u32) -> u64 {
        match self.next.binary_search(&tok) {
            Ok(i) => self.cum[i] - if i == 0 { 0 } else { self.cum[i - 1] },
            Err(_) => 0,
        }
    }

    fn prob(&self, tok: u32) -> f64 {
        self.count(tok) as f64 / self.total as f64
    }

    fn pairs(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.next.iter().enumerate().map(|(i, &t)| (t, self.cum[i] - if i == 0 { 0 } else { self.cum[i - 1] }))
    }
}

type Table = HashMap<u128, ContextCounts>;

fn pack(ctx: &[u32]) -> u128 {
    ctx.iter().fold(0u128, |acc, &id| (acc << 32) | id as u128)
}

fn count_tables(order: usize, seqs: &[&[u32]]) -> Vec<Table> {
    let mut raw: Vec<HashMap<u128, HashMap<u32, u64>>> = vec![HashMap::new(); order];
    let mut padded = Vec::new();
    for seq in seqs {
        padded.clear();
        padded.resize(order - 1, BOS_ID);
        padded.extend_from_slice(seq);
        for i in order - 1..padded.len() {
            let target = padded[i];
            for (k, table) in raw.iter_mut().enumerate() {
                *table.entry(pack(&padded[i - k..i])).or_default().entry(target).or_insert(0) += 1;
            }
        }
    }
    raw.into_iter()
        .map(|t| t.into_iter().map(|(k, v)| (k, ContextCounts::from_counts(v))).collect())
        .collect()
}

/// A trained (or empty) n-gram model.
#[derive(Clone, Debug)]
pub struct NGramModel {
    order: usize,
    vocab: Arc<[Token]>,
    index: HashMap<Token, u32>,
    tables: Vec<Table>,
    weights: Vec<f64>,
    floor: f64,
    heldout_nll: Vec<f64>,
}

impl NGramModel {
    /// An untrained model of the given order.
    pub fn new(order: usize) -> Result<Self, GeneratorError> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(GeneratorError::InvalidConfig(format!("n-gram order must be in 1..={MAX_ORDER}")));
        }
        Ok(NGramModel {
            order,
            vocab: Arc::from(Vec::new()),
            index: HashMap::new(),
            tables: Vec::new(),
            weights: vec![1.0 / order as f64; order],
            floor: 0.0,
            heldout_nll: Vec::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[Token] {
        &self.vocab
    }

    pub fn is_trained(&self) -> bool {
        !self.tables.is_empty()
    }

    /// Interpolation weights, shortest context first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Held-out NLL before tuning and after each epoch.
    pub fn heldout_history(&self) -> &[f64] {
        &self.heldout_nll
    }

    /// Unsmoothed relative frequency of `token` after exactly `context`, or
    /// `None` if the context was never observed.
    pub fn ml_probability(&self, context: &[&str], token: &str) -> Option<f64> {
        if context.len() >= self.order {
            return None;
        }
        let ids: Vec<u32> = context.iter().map(|t| self.id_of(t)).collect();
        let tok = self.index.get(&Token::from(token)).copied().unwrap_or(UNK_ID);
        self.tables.get(context.len())?.get(&pack(&ids)).map(|cc| cc.prob(tok))
    }

    fn id_of(&self, text: &str) -> u32 {
        if text == BOS_TEXT {
            return BOS_ID;
        }
        self.index.get(&Token::from(text)).copied().unwrap_or(UNK_ID)
    }

    /// Fits a fresh model of this order to `programs`. Counts cover every
    /// program; the mixture weights run `epochs` EM rounds on a held-out
    /// split scored against counts from the remaining programs.
    pub fn fit(&self, programs: &[Arc<TestProgram>], epochs: u32, rng_seed: u64) -> Result<Self, GeneratorError> {
        if programs.is_empty() {
            return Err(GeneratorError::EmptyTrainingSet);
        }
        let mut vocab: Vec<Token> = programs.iter().flat_map(|p| p.tokens().iter().cloned()).collect();
        vocab.push(Token::from(EOS));
        vocab.sort_unstable();
        vocab.dedup();
        let index: HashMap<Token, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let eos = index[&Token::from(EOS)];
        let seqs: Vec<Vec<u32>> = programs
            .iter()
            .map(|p| p.tokens().iter().map(|t| index[t]).chain(std::iter::once(eos)).collect())
            .collect();

        let mut order_idx: Vec<usize> = (0..seqs.len()).collect();
        order_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
        let (heldout, rest): (Vec<&[u32]>, Vec<&[u32]>) = if seqs.len() >= 2 {
            let n_held = ((seqs.len() as f64 * HELDOUT_FRACTION).round() as usize).max(1);
            let held = order_idx[..n_held].iter().map(|&i| seqs[i].as_slice()).collect();
            let rest = order_idx[n_held..].iter().map(|&i| seqs[i].as_slice()).collect();
            (held, rest)
        } else {
            let all: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
            (all.clone(), all)
        };

        let floor = FLOOR.min(0.5 / vocab.len() as f64);
        let scale = 1.0 - floor * vocab.len() as f64;
        let tune_tables = count_tables(self.order, &rest);
        let components = heldout_components(self.order, &tune_tables, &heldout);

        let mut weights = vec![1.0 / self.order as f64; self.order];
        let mut history = vec![mixture_nll(&components, &weights, floor, scale)];
        for _ in 0..epochs {
            weights = em_round(&components, &weights, floor, scale);
            history.push(mixture_nll(&components, &weights, floor, scale));
        }

        let all: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
        Ok(NGramModel {
            order: self.order,
            vocab: vocab.into(),
            index,
            tables: count_tables(self.order, &all),
            weights,
            floor,
            heldout_nll: history,
        })
    }

    fn context_ids(&self, prefix: &[Token]) -> Vec<u32> {
        let want = self.order - 1;
        let tail = &prefix[prefix.len().saturating_sub(want)..];
        let mut ids = vec![BOS_ID; want - tail.len()];
        ids.extend(tail.iter().map(|t| self.index.get(t).copied().unwrap_or(UNK_ID)));
        ids
    }

    /// The component distribution in use at each order, after back-off.
    fn resolve(&self, ctx: &[u32]) -> Vec<&ContextCounts> {
        resolve_in(&self.tables, ctx)
    }

    fn scale(&self) -> f64 {
        1.0 - self.floor * self.vocab.len() as f64
    }

    fn prob_id(&self, ctx: &[u32], tok: u32) -> f64 {
        let res = self.resolve(ctx);
        let mix: f64 = res.iter().zip(&self.weights).map(|(cc, w)| w * cc.prob(tok)).sum();
        self.floor + self.scale() * mix
    }

    /// Average per-token negative log-likelihood of `programs` (EOS
    /// included) under the smoothed model.
    pub fn average_nll(&self, programs: &[Arc<TestProgram>]) -> Result<f64, GeneratorError> {
        if !self.is_trained() {
            return Err(GeneratorError::Untrained);
        }
        let eos = self.index[&Token::from(EOS)];
        let (mut total, mut n) = (0.0, 0usize);
        for p in programs {
            let mut seq = vec![BOS_ID; self.order - 1];
            seq.extend(p.tokens().iter().map(|t| self.index.get(t).copied().unwrap_or(UNK_ID)));
            seq.push(eos);
            for i in self.order - 1..seq.len() {
                let tok = seq[i];
                let p = if tok == UNK_ID { self.floor } else { self.prob_id(&seq[i + 1 - self.order..i], tok) };
                total -= p.ln();
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }

    fn dense(&self, ctx: &[u32]) -> Vec<f64> {
        let scale = self.scale();
        let mut probs = vec![self.floor; self.vocab.len()];
        let res = self.resolve(ctx);
        let mut k = 0;
        while k < res.len() {
            let cc = res[k];
            let mut w = self.weights[k];
            while k + 1 < res.len() && std::ptr::eq(res[k + 1], cc) {
                k += 1;
                w += self.weights[k];
            }
            let f = scale * w / cc.total as f64;
            for (tok, c) in cc.pairs() {
                probs[tok as usize] += f * c as f64;
            }
            k += 1;
        }
        probs
    }

    /// Exact draw from the mixture without materializing it: pick the floor
    /// or a component by weight, then a successor by count.
    fn sample_mixture(&self, ctx: &[u32], rng: &mut ChaCha8Rng) -> Token {
        let v = self.vocab.len();
        if rng.gen::<f64>() < self.floor * v as f64 {
            return self.vocab[rng.gen_range(0..v)].clone();
        }
        let res = self.resolve(ctx);
        let mut x = rng.gen::<f64>();
        let mut pick = res.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            if x < *w {
                pick = k;
                break;
            }
            x -= w;
        }
        let cc = res[pick];
        let r = rng.gen_range(0..cc.total);
        let i = cc.cum.partition_point(|&c| c <= r);
        self.vocab[cc.next[i] as usize].clone()
    }

    pub fn to_snapshot(&self) -> Result<Vec<u8>, GeneratorError> {
        if !self.is_trained() {
            return Err(GeneratorError::Untrained);
        }
        let text = |id: u32| if id == BOS_ID { BOS_TEXT.to_string() } else { self.vocab[id as usize].as_str().to_string() };
        let tables = self
            .tables
            .iter()
            .enumerate()
            .map(|(k, table)| {
                let mut keys: Vec<&u128> = table.keys().collect();
                keys.sort_unstable();
                keys.into_iter()
                    .map(|key| {
                        let context = (0..k).rev().map(|j| text((key >> (32 * j)) as u32)).collect();
                        let next = table[key].pairs().map(|(t, c)| (self.vocab[t as usize].clone(), c)).collect();
                        SnapshotContext { context, next }
                    })
                    .collect()
            })
            .collect();
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            order: self.order,
            vocab: self.vocab.to_vec(),
            weights: self.weights.clone(),
            floor: self.floor,
            heldout_nll: self.heldout_nll.clone(),
            tables,
        };
        serde_json::to_vec(&snap).map_err(|e| GeneratorError::Snapshot(e.to_string()))
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, GeneratorError> {
        let bad = |m: String| GeneratorError::Snapshot(m);
        let snap: Snapshot = serde_json::from_slice(bytes).map_err(|e| bad(e.to_string()))?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(bad(format!("unsupported snapshot {} v{}", snap.format, snap.version)));
        }
        let mut model = NGramModel::new(snap.order)?;
        if snap.weights.len() != snap.order || snap.tables.len() != snap.order {
            return Err(bad("weights/tables do not match order".into()));
        }
        model.index = snap.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        model.vocab = snap.vocab.into();
        let mut tables = Vec::with_capacity(snap.order);
        for (k, contexts) in snap.tables.into_iter().enumerate() {
            let mut table = Table::new();
            for c in contexts {
                if c.context.len() != k {
                    return Err(bad(format!("context of length {} in order-{k} table", c.context.len())));
                }
                let ids: Vec<u32> = c.context.iter().map(|t| model.id_of(t)).collect();
                let mut counts = HashMap::new();
                for (tok, n) in c.next {
                    let id = *model.index.get(&tok).ok_or_else(|| bad(format!("token {tok:?} not in vocab")))?;
                    counts.insert(id, n);
                }
                if ids.contains(&UNK_ID) {
                    return Err(bad("context token not in vocab".into()));
                }
                table.insert(pack(&ids), ContextCounts::from_counts(counts));
            }
            tables.push(table);
        }
        model.tables = tables;
        model.weights = snap.weights;
        model.floor = snap.floor;
        model.heldout_nll = snap.heldout_nll;
        Ok(model)
    }
}

fn resolve_in<'t>(tables: &'t [Table], ctx: &[u32]) -> Vec<&'t ContextCounts> {
    let unigram = tables[0].get(&0).expect("trained model has a unigram table");
    let mut res = Vec::with_capacity(tables.len());
    res.push(unigram);
    for k in 1..tables.len() {
        let key = pack(&ctx[ctx.len() - k..]);
        let cc = tables[k].get(&key).unwrap_or(res[k - 1]);
        res.push(cc);
    }
    res
}

/// Per held-out position, the probability of the observed token under each
/// component.
fn heldout_components(order: usize, tables: &[Table], heldout: &[&[u32]]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut padded = Vec::new();
    for seq in heldout {
        padded.clear();
        padded.resize(order - 1, BOS_ID);
        padded.extend_from_slice(seq);
        for i in order - 1..padded.len() {
            let res = resolve_in(tables, &padded[i + 1 - order..i]);
            out.push(res.iter().map(|cc| cc.prob(padded[i])).collect());
        }
    }
    out
}

fn mixture_nll(components: &[Vec<f64>], weights: &[f64], floor: f64, scale: f64) -> f64 {
    if components.is_empty() {
        return 0.0;
    }
    let total: f64 = components
        .iter()
        .map(|p| -(floor + scale * p.iter().zip(weights).map(|(p, w)| p * w).sum::<f64>()).ln())
        .sum();
    total / components.len() as f64
}

/// One EM update of the component weights; the floor's share stays fixed.
fn em_round(components: &[Vec<f64>], weights: &[f64], floor: f64, scale: f64) -> Vec<f64> {
    let mut resp = vec![0.0; weights.len()];
    for p in components {
        let mix = floor + scale * p.iter().zip(weights).map(|(p, w)| p * w).sum::<f64>();
        for (k, r) in resp.iter_mut().enumerate() {
            *r += scale * weights[k] * p[k] / mix;
        }
    }
    let total: f64 = resp.iter().sum();
    if total <= 0.0 {
        return weights.to_vec();
    }
    resp.iter().map(|r| r / total).collect()
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    order: usize,
    vocab: Vec<Token>,
    weights: Vec<f64>,
    floor: f64,
    heldout_nll: Vec<f64>,
    tables: Vec<Vec<SnapshotContext>>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotContext {
    context: Vec<String>,
    next: Vec<(Token, u64)>,
}

impl GeneratorBackend for NGramModel {
    fn name(&self) -> &str {
        "ngram"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { supports_training: true, max_context: self.order - 1 }
    }

    fn train(&self, programs: &[Arc<TestProgram>], epochs: u32, rng_seed: u64) -> Result<TrainOutcome, GeneratorError> {
        let model = self.fit(programs, epochs, rng_seed)?;
        let heldout_nll = *model.heldout_nll.last().expect("history is never empty");
        Ok(TrainOutcome { backend: Arc::new(model), heldout_nll })
    }

    fn next_token_distribution(&self, prefix: &[Token]) -> Result<TokenDistribution, GeneratorError> {
        if !self.is_trained() {
            return Err(GeneratorError::Untrained);
        }
        let probs = self.dense(&self.context_ids(prefix));
        Ok(TokenDistribution { tokens: Arc::clone(&self.vocab), probs })
    }

    fn sample_next(&self, prefix: &[Token], temperature: f64, rng: &mut ChaCha8Rng) -> Result<Token, GeneratorError> {
        if !self.is_trained() {
            return Err(GeneratorError::Untrained);
        }
        if (temperature - 1.0).abs() < f64::EPSILON {
            return Ok(self.sample_mixture(&self.context_ids(prefix), rng));
        }
        let dist = self.next_token_distribution(prefix)?;
        super::sample_token(&dist, temperature, rng)
    }

    fn snapshot(&self) -> Result<Vec<u8>, GeneratorError> {
        self.to_snapshot()
    }

    fn restore(&self, snapshot: &[u8]) -> Result<Arc<dyn GeneratorBackend>, GeneratorError> {
        Ok(Arc::new(NGramModel::from_snapshot(snapshot)?))
    }
}
