// SPDX-License-Identifier: Apache-2.0

//! Learned program generation.
//!
//! A [`GeneratorBackend`] is a trainable next-token model. Backends are
//! immutable once built: training returns a new backend value. The
//! [`Decoder`] strategies turn a backend plus a seed program into new test
//! programs by continuing a short prefix of the seed.

pub mod http;
mod ngram;
mod registry;

use std::sync::Arc;

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ProgramId, Provenance, TestProgram, Token};
use crate::seeding::{derive_seed, short_hash};

pub use http::HttpBackend;
pub use ngram::{NGramModel, DEFAULT_ORDER, MAX_ORDER};
pub use registry::{BackendRegistry, DecoderRegistry};

/// Text of the explicit end-of-program marker.
pub const EOS: &str = "</s>";

/// Below this temperature sampling degenerates to argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("generator backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("backend has not been trained")]
    Untrained,
    #[error("seed {id} has {have} tokens, prefix needs {need}")]
    SeedTooShort { id: ProgramId, have: usize, need: usize },
    #[error("distribution has no positive mass")]
    DegenerateDistribution,
    #[error("operation not supported by backend {backend}: {op}")]
    Unsupported { backend: String, op: &'static str },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("bad model snapshot: {0}")]
    Snapshot(String),
    #[error("generator protocol error: {0}")]
    Protocol(String),
    #[error("unknown {kind} {name:?}")]
    UnknownStrategy { kind: &'static str, name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_training: bool,
    pub max_context: usize,
}

/// A probability vector over a backend's vocabulary.
#[derive(Clone, Debug)]
pub struct TokenDistribution {
    pub tokens: Arc<[Token]>,
    pub probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn prob_of(&self, token: &str) -> f64 {
        self.tokens
            .iter()
            .position(|t| t.as_str() == token)
            .map_or(0.0, |i| self.probs[i])
    }
}

/// Body of a continuation request; also the `/generate` wire format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prefix_tokens: Vec<Token>,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub num_samples: usize,
    pub rng_seed: u64,
}

/// When a continuation stops before its token budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// Brace depth returns to zero after at least one `{`.
    BraceClosure,
    /// Only EOS or the budget ends a sample.
    Budget,
}

#[derive(Clone, Copy, Debug, Default)]
struct BraceState {
    depth: usize,
    opened: bool,
}

impl BraceState {
    fn of(tokens: &[Token]) -> Self {
        let mut s = Self::default();
        tokens.iter().for_each(|t| s.push(t));
        s
    }

    fn push(&mut self, t: &Token) {
        if t.is_open_brace() {
            self.depth += 1;
            self.opened = true;
        } else if t.is_close_brace() {
            self.depth = self.depth.saturating_sub(1);
        }
    }

    fn closed(&self) -> bool {
        self.opened && self.depth == 0
    }
}

/// Cuts `sample` at EOS and, under [`StopRule::BraceClosure`], right after
/// the token that balances the braces opened since the start of `prefix`.
pub fn apply_stop_rule(prefix: &[Token], sample: &[Token], stop: StopRule) -> Vec<Token> {
    let mut state = BraceState::of(prefix);
    if stop == StopRule::BraceClosure && state.closed() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for t in sample {
        if t.as_str() == EOS {
            break;
        }
        out.push(t.clone());
        state.push(t);
        if stop == StopRule::BraceClosure && state.closed() {
            break;
        }
    }
    out
}

pub struct TrainOutcome {
    pub backend: Arc<dyn GeneratorBackend>,
    /// Average per-token negative log-likelihood on the held-out split.
    pub heldout_nll: f64,
}

/// A trainable conditional next-token model.
pub trait GeneratorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Fits a new backend to `programs`. The receiver is left untouched.
    fn train(
        &self,
        programs: &[Arc<TestProgram>],
        epochs: u32,
        rng_seed: u64,
    ) -> Result<TrainOutcome, GeneratorError>;

    /// Distribution of the token following `prefix`. Only the trailing
    /// `max_context` tokens condition it.
    fn next_token_distribution(&self, prefix: &[Token]) -> Result<TokenDistribution, GeneratorError>;

    fn sample_next(
        &self,
        prefix: &[Token],
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Token, GeneratorError> {
        let dist = self.next_token_distribution(prefix)?;
        sample_token(&dist, temperature, rng)
    }

    /// Continues `req.prefix_tokens` `req.num_samples` times; each returned
    /// sample excludes the prefix. Sample `r` draws from its own stream
    /// seeded by `(req.rng_seed, r)`.
    fn generate(&self, req: &GenerateRequest, stop: StopRule) -> Result<Vec<Vec<Token>>, GeneratorError> {
        (0..req.num_samples)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&req.rng_seed.to_le_bytes(), &(r as u64).to_le_bytes()]));
                let mut seq = req.prefix_tokens.clone();
                let mut state = BraceState::of(&seq);
                let mut out = Vec::new();
                if stop == StopRule::BraceClosure && state.closed() {
                    return Ok(out);
                }
                while out.len() < req.max_new_tokens {
                    let next = match seq.last() {
                        Some(last) if last.is_line_terminal() => Token::newline(),
                        _ => self.sample_next(&seq, req.temperature, &mut rng)?,
                    };
                    if next.as_str() == EOS {
                        break;
                    }
                    state.push(&next);
                    seq.push(next.clone());
                    out.push(next);
                    if stop == StopRule::BraceClosure && state.closed() {
                        break;
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Serialized model state, restorable with [`GeneratorBackend::restore`].
    fn snapshot(&self) -> Result<Vec<u8>, GeneratorError>;

    fn restore(&self, snapshot: &[u8]) -> Result<Arc<dyn GeneratorBackend>, GeneratorError>;
}

/// Draws from `dist` reweighted to `p^(1/temperature)`. Temperatures below
/// [`GREEDY_TEMPERATURE`] pick the argmax, ties going to the lexicographically
/// smallest token text.
pub fn sample_token(
    dist: &TokenDistribution,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Token, GeneratorError> {
    if !dist.probs.iter().any(|&p| p > 0.0) {
        return Err(GeneratorError::DegenerateDistribution);
    }
    if temperature < GREEDY_TEMPERATURE {
        return Ok(argmax(dist).clone());
    }
    let idx = if (temperature - 1.0).abs() < f64::EPSILON {
        WeightedIndex::new(&dist.probs)
            .map_err(|_| GeneratorError::DegenerateDistribution)?
            .sample(rng)
    } else {
        let max_log = dist
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p.ln())
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = dist
            .probs
            .iter()
            .map(|&p| if p > 0.0 { ((p.ln() - max_log) / temperature).exp() } else { 0.0 })
            .collect();
        WeightedIndex::new(&weights)
            .map_err(|_| GeneratorError::DegenerateDistribution)?
            .sample(rng)
    };
    Ok(dist.tokens[idx].clone())
}

fn argmax(dist: &TokenDistribution) -> &Token {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        let (bp, bt) = (dist.probs[best], &dist.tokens[best]);
        if p > bp || (p == bp && dist.tokens[i] < *bt) {
            best = i;
        }
    }
    &dist.tokens[best]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub prefix_len: usize,
    pub candidates_per_seed: usize,
    pub token_limit: usize,
    pub rng_seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 1.0,
            prefix_len: 3,
            candidates_per_seed: 4,
            token_limit: 600,
            rng_seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if !(self.temperature > 0.0) {
            return Err(GeneratorError::InvalidConfig("temperature must be positive".into()));
        }
        if self.prefix_len == 0 || self.prefix_len > self.token_limit {
            return Err(GeneratorError::InvalidConfig(format!(
                "prefix_len {} must be in 1..={}",
                self.prefix_len, self.token_limit
            )));
        }
        if self.candidates_per_seed == 0 {
            return Err(GeneratorError::InvalidConfig("candidates_per_seed must be at least 1".into()));
        }
        Ok(())
    }
}

fn prefix_of(seed: &TestProgram, len: usize) -> Result<Vec<Token>, GeneratorError> {
    let tokens = seed.tokens();
    if tokens.len() < len {
        return Err(GeneratorError::SeedTooShort { id: seed.id().clone(), have: tokens.len(), need: len });
    }
    Ok(tokens[..len].to_vec())
}

/// Id of the `r`-th program generated from `parent` in `iteration`.
pub fn generated_id(iteration: u32, parent: &ProgramId, r: usize) -> ProgramId {
    ProgramId::new(format!("i{iteration}-g{}", short_hash(&[parent.as_str().as_bytes(), &(r as u64).to_le_bytes()])))
}

fn wrap_candidates(
    seed: &TestProgram,
    prefix: &[Token],
    samples: Vec<Vec<Token>>,
    iteration: u32,
) -> Result<Vec<TestProgram>, GeneratorError> {
    samples
        .into_iter()
        .enumerate()
        .map(|(r, sample)| {
            let mut tokens = prefix.to_vec();
            tokens.extend(sample);
            TestProgram::new(
                generated_id(iteration, seed.id(), r),
                tokens,
                Provenance::Generated,
                iteration.max(1),
                Some(seed.id().clone()),
            )
            .map_err(|e| GeneratorError::Protocol(e.to_string()))
        })
        .collect()
}

/// Perturbed generation: `candidates_per_seed` continuations of the seed's
/// first `prefix_len` tokens, sampled at `temperature`, each capped at
/// `token_limit` tokens in total.
pub fn generate_candidates(
    backend: &dyn GeneratorBackend,
    seed: &TestProgram,
    cfg: &GenerationConfig,
    iteration: u32,
) -> Result<Vec<TestProgram>, GeneratorError> {
    cfg.validate()?;
    let prefix = prefix_of(seed, cfg.prefix_len)?;
    let req = GenerateRequest {
        prefix_tokens: prefix.clone(),
        max_new_tokens: cfg.token_limit - cfg.prefix_len,
        temperature: cfg.temperature,
        num_samples: cfg.candidates_per_seed,
        rng_seed: derive_seed(&[&cfg.rng_seed.to_le_bytes(), seed.id().as_str().as_bytes()]),
    };
    let samples = backend.generate(&req, StopRule::BraceClosure)?;
    wrap_candidates(seed, &prefix, samples, iteration)
}

/// Greedy decoding from the seed's first `cfg.prefix_len` tokens: argmax at
/// every step, so the output is a pure function of backend and seed.
pub fn generate_greedy(
    backend: &dyn GeneratorBackend,
    seed: &TestProgram,
    cfg: &GenerationConfig,
    iteration: u32,
) -> Result<TestProgram, GeneratorError> {
    if cfg.prefix_len == 0 || cfg.prefix_len > cfg.token_limit {
        return Err(GeneratorError::InvalidConfig("prefix_len out of range".into()));
    }
    let prefix = prefix_of(seed, cfg.prefix_len)?;
    let req = GenerateRequest {
        prefix_tokens: prefix.clone(),
        max_new_tokens: cfg.token_limit - cfg.prefix_len,
        temperature: 0.0,
        num_samples: 1,
        rng_seed: 0,
    };
    let samples = backend.generate(&req, StopRule::BraceClosure)?;
    Ok(wrap_candidates(seed, &prefix, samples, iteration)?.remove(0))
}

/// A way of turning one seed into new candidate programs.
pub trait Decoder: Send + Sync {
    fn name(&self) -> &'static str;

    fn decode(
        &self,
        backend: &dyn GeneratorBackend,
        seed: &TestProgram,
        cfg: &GenerationConfig,
        iteration: u32,
    ) -> Result<Vec<TestProgram>, GeneratorError>;
}

/// Temperature sampling from a short prefix.
pub struct PerturbedDecoder;

impl Decoder for PerturbedDecoder {
    fn name(&self) -> &'static str {
        "perturbed"
    }

    fn decode(
        &self,
        backend: &dyn GeneratorBackend,
        seed: &TestProgram,
        cfg: &GenerationConfig,
        iteration: u32,
    ) -> Result<Vec<TestProgram>, GeneratorError> {
        generate_candidates(backend, seed, cfg, iteration)
    }
}

/// Argmax decoding, one candidate per seed.
pub struct GreedyDecoder;

impl Decoder for GreedyDecoder {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn decode(
        &self,
        backend: &dyn GeneratorBackend,
        seed: &TestProgram,
        cfg: &GenerationConfig,
        iteration: u32,
    ) -> Result<Vec<TestProgram>, GeneratorError> {
        generate_greedy(backend, seed, cfg, iteration).map(|p| vec![p])
    }
}
