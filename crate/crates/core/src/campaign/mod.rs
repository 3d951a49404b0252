// SPDX-License-Identifier: Apache-2.0

//! The fuzzing loop.
//!
//! Each iteration trains on the whole corpus, samples seeds, continues each
//! seed's prefix into candidates, compiles every candidate once without a
//! pass and then once per pass, files crashes, and finally adds the valid
//! candidates and the distinct pass outputs back into the corpus.
//!
//! All randomness of iteration `n` is derived from `(rng_seed, n)`, so a run
//! restored from the checkpoint of iteration `n` continues exactly like the
//! uninterrupted run. With a simulated compiler the campaign also runs on a
//! virtual clock, which makes every export byte-stable.

mod checkpoint;
mod config;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    sample_fuzz_seeds, ContentHash, CorpusError, CorpusStore, ProgramId, Provenance, TestProgram,
};
use crate::generator::{Decoder, DecoderRegistry, GeneratorBackend, GeneratorError};
use crate::harness::{Compiler, ExecutionOutcome, HarnessError, OutcomeKind, PassSpec, TransformedProgram};
use crate::seeding::{derive_seed, short_hash};
use crate::triage::{bug_key_or_catch_all, BugRegistry, CrashRecord, TriageError};

pub use checkpoint::{
    checkpoint_dir, latest_checkpoint, read_meta, resume, write_checkpoint, CheckpointMeta, CHECKPOINT_DIR, CORPUS_DIR,
};
pub use config::{CampaignConfig, Mode, GREEDY_PREFIX_LEN};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign config: {0}")]
    ConfigInvalid(String),
    #[error("seed corpus is empty")]
    EmptySeeds,
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub seeds_sampled: usize,
    /// Seeds shorter than the prefix, or whose generation failed.
    pub skipped_seeds: usize,
    pub generated: usize,
    pub compile_valid: usize,
    pub crashes: usize,
    pub new_bugs: usize,
    pub timeouts: usize,
    pub programs_added: usize,
    pub transformed_added: usize,
    pub corpus_size: usize,
    pub heldout_nll: Option<f64>,
    /// Set when the wall-clock budget cut the sweep short.
    pub truncated: bool,
    #[serde(with = "secs")]
    pub elapsed: Duration,
}

/// Progress marker appended after every sweep batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub iteration: u32,
    pub elapsed_ms: u64,
    pub tests: u64,
    pub new_bugs: u64,
}

#[derive(Clone, Debug)]
enum Clock {
    System { start: Instant, offset: Duration },
    Virtual { elapsed: Duration },
}

impl Clock {
    fn elapsed(&self) -> Duration {
        match self {
            Clock::System { start, offset } => *offset + start.elapsed(),
            Clock::Virtual { elapsed } => *elapsed,
        }
    }

    fn charge(&mut self, simulated: Duration) {
        if let Clock::Virtual { elapsed } = self {
            *elapsed += simulated;
        }
    }

    fn resumed(is_virtual: bool, at: Duration) -> Self {
        if is_virtual {
            Clock::Virtual { elapsed: at }
        } else {
            Clock::System { start: Instant::now(), offset: at }
        }
    }
}

/// Everything that evolves over a campaign.
pub struct CampaignState {
    pub corpus: CorpusStore,
    pub registry: BugRegistry,
    pub model: Option<Arc<dyn GeneratorBackend>>,
    /// Completed iterations.
    pub iteration: u32,
    pub reports: Vec<IterationReport>,
    pub timeline: Vec<TimelineEvent>,
    /// Wall-clock origin for crash timestamps.
    pub origin: DateTime<Utc>,
    clock: Clock,
}

impl CampaignState {
    pub fn elapsed(&self) -> Duration {
        self.clock.elapsed()
    }
}

/// Outcome of a whole campaign.
pub struct CampaignResult {
    pub registry: BugRegistry,
    pub reports: Vec<IterationReport>,
    pub timeline: Vec<TimelineEvent>,
    pub corpus: CorpusStore,
    pub elapsed: Duration,
}

/// A configured loop: compiler, pass list, backend and decoder.
pub struct Campaign {
    cfg: CampaignConfig,
    compiler: Arc<dyn Compiler>,
    passes: Vec<PassSpec>,
    backend: Arc<dyn GeneratorBackend>,
    decoder: Arc<dyn Decoder>,
    out: Option<PathBuf>,
    pool: rayon::ThreadPool,
}

/// Per-candidate result of the compile phase.
struct Evaluation {
    valid: bool,
    crashes: Vec<(String, String)>,
    timeouts: usize,
    transformed: Vec<TestProgram>,
    simulated: Duration,
}

fn sub_seed(base: u64, label: &str) -> u64 {
    derive_seed(&[&base.to_le_bytes(), label.as_bytes()])
}

/// Id of the output of `pass` over `source`.
pub fn transformed_id(iteration: u32, source: &ProgramId, pass: &str) -> ProgramId {
    ProgramId::new(format!("i{iteration}-t{}", short_hash(&[source.as_str().as_bytes(), pass.as_bytes()])))
}

/// Wraps a pass output as a corpus program; empty outputs yield `None`.
pub fn transformed_program(t: &TransformedProgram, iteration: u32) -> Option<TestProgram> {
    TestProgram::from_text(
        transformed_id(iteration, &t.source_id, &t.pass_flag),
        &t.output_text,
        Provenance::Transformed,
        iteration.max(1),
        Some(t.source_id.clone()),
    )
    .ok()
}

/// Adds valid generated programs, then the pass outputs, skipping content
/// already present. Returns how many of each were added.
pub fn augment_training_set(
    corpus: &mut CorpusStore,
    generated_valid: Vec<TestProgram>,
    transformed: &[TransformedProgram],
    iteration: u32,
) -> (usize, usize) {
    let wrapped = transformed.iter().filter_map(|t| transformed_program(t, iteration)).collect();
    add_programs(corpus, generated_valid, wrapped)
}

fn add_programs(corpus: &mut CorpusStore, generated: Vec<TestProgram>, transformed: Vec<TestProgram>) -> (usize, usize) {
    let g = generated.into_iter().filter_map(|p| corpus.add_program(p).then_some(())).count();
    let t = transformed.into_iter().filter_map(|p| corpus.add_program(p).then_some(())).count();
    (g, t)
}

/// Stderr of a crashed run, or a stand-in naming the signal or exit code when
/// the compiler printed nothing.
pub fn crash_stderr(o: &ExecutionOutcome) -> String {
    if !o.stderr.trim().is_empty() {
        o.stderr.clone()
    } else if let Some(sig) = o.signal {
        format!("terminated by signal {sig}\n")
    } else {
        format!("crashed with exit code {:?}\n", o.exit_code)
    }
}

impl Campaign {
    pub fn new(
        cfg: CampaignConfig,
        compiler: Arc<dyn Compiler>,
        passes: Vec<PassSpec>,
        backend: Arc<dyn GeneratorBackend>,
    ) -> Result<Self, CampaignError> {
        let cfg = cfg.normalized()?;
        let decoder = DecoderRegistry::default().get(cfg.decoder_name())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.worker_pool_width)
            .build()
            .map_err(|e| CampaignError::ConfigInvalid(format!("worker pool: {e}")))?;
        Ok(Campaign { cfg, compiler, passes, backend, decoder, out: None, pool })
    }

    /// Writes a checkpoint per iteration under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out = Some(dir.into());
        self
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.cfg
    }

    pub fn output(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    pub fn backend(&self) -> &Arc<dyn GeneratorBackend> {
        &self.backend
    }

    pub fn compiler(&self) -> &Arc<dyn Compiler> {
        &self.compiler
    }

    fn origin(&self) -> DateTime<Utc> {
        if self.compiler.is_simulated() {
            DateTime::<Utc>::UNIX_EPOCH
        } else {
            Utc::now()
        }
    }

    /// Fresh state over `seeds`, in the given order.
    pub fn start(&self, seeds: impl IntoIterator<Item = TestProgram>) -> Result<CampaignState, CampaignError> {
        let mut corpus = CorpusStore::new();
        for s in seeds {
            corpus.add_program(s);
        }
        if corpus.is_empty() {
            return Err(CampaignError::EmptySeeds);
        }
        Ok(CampaignState {
            corpus,
            registry: BugRegistry::new(),
            model: None,
            iteration: 0,
            reports: Vec::new(),
            timeline: Vec::new(),
            origin: self.origin(),
            clock: Clock::resumed(self.compiler.is_simulated(), Duration::ZERO),
        })
    }

    fn budget_exhausted(&self, st: &CampaignState) -> bool {
        self.cfg.budget().is_some_and(|b| st.clock.elapsed() >= b)
    }

    /// Runs iterations until `max_iterations` or the budget is reached.
    pub fn run(&self, st: &mut CampaignState) -> Result<(), CampaignError> {
        while st.iteration < self.cfg.max_iterations && !self.budget_exhausted(st) {
            let report = self.run_iteration(st)?;
            log::info!(
                "iteration {}: generated {} valid {} crashes {} new bugs {} (total {}) corpus {}",
                report.iteration,
                report.generated,
                report.compile_valid,
                report.crashes,
                report.new_bugs,
                st.registry.bug_count(),
                report.corpus_size
            );
        }
        Ok(())
    }

    fn evaluate(&self, q: &TestProgram, iteration: u32) -> Evaluation {
        let timeout = self.cfg.timeout();
        let mut ev = Evaluation {
            valid: false,
            crashes: Vec::new(),
            timeouts: 0,
            transformed: Vec::new(),
            simulated: Duration::ZERO,
        };
        let check = match self.compiler.run(q.text(), None, timeout) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("compile check of {} failed to run: {e}", q.id());
                return ev;
            }
        };
        ev.simulated += check.wall_time;
        match check.kind {
            OutcomeKind::Valid => ev.valid = true,
            OutcomeKind::Crash => ev.crashes.push((String::new(), crash_stderr(&check))),
            OutcomeKind::Timeout => ev.timeouts += 1,
            OutcomeKind::Diagnostic => {}
        }
        if !ev.valid {
            return ev;
        }
        let outcomes = match self.compiler.run_passes(q.text(), &self.passes, timeout) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("pass sweep of {} failed to run: {e}", q.id());
                return ev;
            }
        };
        let mut seen: HashSet<ContentHash> = HashSet::from([*q.content_hash()]);
        for (pass, o) in self.passes.iter().zip(outcomes) {
            ev.simulated += o.wall_time;
            match o.kind {
                OutcomeKind::Crash => ev.crashes.push((pass.flag.clone(), crash_stderr(&o))),
                OutcomeKind::Timeout => ev.timeouts += 1,
                OutcomeKind::Valid if !o.stdout.trim().is_empty() => {
                    let t = TransformedProgram {
                        source_id: q.id().clone(),
                        pass_flag: pass.flag.clone(),
                        output_text: o.stdout,
                    };
                    if let Some(p) = transformed_program(&t, iteration) {
                        if seen.insert(*p.content_hash()) {
                            ev.transformed.push(p);
                        }
                    }
                }
                OutcomeKind::Valid | OutcomeKind::Diagnostic => {}
            }
        }
        ev
    }

    /// One pass of the loop over `st`.
    pub fn run_iteration(&self, st: &mut CampaignState) -> Result<IterationReport, CampaignError> {
        let cfg = &self.cfg;
        let iter = st.iteration + 1;
        let started = st.clock.elapsed();
        let iseed = derive_seed(&[b"iteration", &cfg.rng_seed.to_le_bytes(), &iter.to_le_bytes()]);

        let mut heldout_nll = None;
        if st.model.is_none() || cfg.mode != Mode::NoAugmentationAblation {
            let trained = self.backend.train(st.corpus.entries(), cfg.epochs, sub_seed(iseed, "train"))?;
            heldout_nll = Some(trained.heldout_nll).filter(|v| v.is_finite());
            st.model = Some(trained.backend);
        }
        let model = st.model.clone().expect("model trained above");

        let seeds = sample_fuzz_seeds(&st.corpus, cfg.max_seed_samples, sub_seed(iseed, "sample"))?;
        let gen_cfg = cfg.generation(sub_seed(iseed, "generate"));
        let decoded: Vec<Result<Vec<TestProgram>, GeneratorError>> = self
            .pool
            .install(|| seeds.par_iter().map(|s| self.decoder.decode(&*model, s, &gen_cfg, iter)).collect());
        let mut generated = Vec::new();
        let mut skipped_seeds = 0;
        for (seed, r) in seeds.iter().zip(decoded) {
            match r {
                Ok(progs) => generated.extend(progs),
                Err(e @ GeneratorError::BackendUnavailable(_)) => return Err(e.into()),
                Err(e) => {
                    log::debug!("seed {} skipped: {e}", seed.id());
                    skipped_seeds += 1;
                }
            }
        }

        let mut report = IterationReport {
            iteration: iter,
            seeds_sampled: seeds.len(),
            skipped_seeds,
            generated: generated.len(),
            compile_valid: 0,
            crashes: 0,
            new_bugs: 0,
            timeouts: 0,
            programs_added: 0,
            transformed_added: 0,
            corpus_size: 0,
            heldout_nll,
            truncated: false,
            elapsed: Duration::ZERO,
        };
        let mut valid_generated = Vec::new();
        let mut transformed = Vec::new();
        let mut pending: HashSet<ContentHash> = HashSet::new();
        let width = cfg.worker_pool_width as u32;

        for batch in generated.chunks(cfg.sweep_batch) {
            if self.budget_exhausted(st) {
                report.truncated = true;
                break;
            }
            let evals: Vec<Evaluation> =
                self.pool.install(|| batch.par_iter().map(|q| self.evaluate(q, iter)).collect());
            let simulated: Duration = evals.iter().map(|e| e.simulated).sum();
            st.clock.charge(simulated / width);
            let now = st.clock.elapsed();
            let stamp = st.origin + chrono::Duration::from_std(now).unwrap_or_default();
            let mut batch_bugs = 0;
            for (q, ev) in batch.iter().zip(evals) {
                report.timeouts += ev.timeouts;
                report.crashes += ev.crashes.len();
                for (pass_flag, stderr) in ev.crashes {
                    let rec = CrashRecord {
                        program_id: q.id().clone(),
                        bug_key: bug_key_or_catch_all(&stderr, &cfg.frame_prefixes),
                        pass_flag,
                        stderr,
                        first_seen: stamp,
                        iteration: iter,
                        program_text: q.text().to_string(),
                    };
                    match st.registry.register_crash(rec) {
                        Ok(true) => batch_bugs += 1,
                        Ok(false) => {}
                        Err(e) => log::debug!("{e}"),
                    }
                }
                if ev.valid {
                    report.compile_valid += 1;
                    if cfg.mode != Mode::NoAugmentationAblation {
                        valid_generated.push(q.clone());
                        for t in ev.transformed {
                            if pending.insert(*t.content_hash()) {
                                transformed.push(t);
                            }
                        }
                    }
                }
            }
            report.new_bugs += batch_bugs;
            st.timeline.push(TimelineEvent {
                iteration: iter,
                elapsed_ms: now.as_millis() as u64,
                tests: batch.len() as u64,
                new_bugs: batch_bugs as u64,
            });
        }

        let (added, added_t) = add_programs(&mut st.corpus, valid_generated, transformed);
        report.programs_added = added;
        report.transformed_added = added_t;
        report.corpus_size = st.corpus.len();
        report.elapsed = st.clock.elapsed().saturating_sub(started);
        st.iteration = iter;
        st.reports.push(report.clone());
        if let Some(out) = &self.out {
            write_checkpoint(out, self, st)?;
        }
        Ok(report)
    }

    /// `start` + `run`, returning the final artifacts.
    pub fn execute(&self, seeds: impl IntoIterator<Item = TestProgram>) -> Result<CampaignResult, CampaignError> {
        let mut st = self.start(seeds)?;
        self.run(&mut st)?;
        Ok(st.into_result())
    }
}

impl CampaignState {
    pub fn into_result(self) -> CampaignResult {
        CampaignResult {
            elapsed: self.clock.elapsed(),
            registry: self.registry,
            reports: self.reports,
            timeline: self.timeline,
            corpus: self.corpus,
        }
    }
}

/// Runs a whole campaign without checkpoints.
pub fn run_campaign(
    cfg: CampaignConfig,
    seeds: Vec<TestProgram>,
    compiler: Arc<dyn Compiler>,
    passes: Vec<PassSpec>,
    backend: Arc<dyn GeneratorBackend>,
) -> Result<CampaignResult, CampaignError> {
    Campaign::new(cfg, compiler, passes, backend)?.execute(seeds)
}
