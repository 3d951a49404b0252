// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use chrono::{DateTime, Utc};
use clap::Args;
use selfuzz_core::campaign::{
    crash_stderr, latest_checkpoint, read_meta, resume, transformed_program, Campaign, CampaignConfig, CHECKPOINT_DIR,
    CORPUS_DIR,
};
use selfuzz_core::corpus::{
    corpus_stats, load_corpus_dir, sample_fuzz_seeds, split_seed_dir, write_corpus_dir, TestProgram, MANIFEST_FILE,
};
use selfuzz_core::generator::{
    generate_candidates, generate_greedy, BackendRegistry, GenerationConfig, GeneratorError, GREEDY_TEMPERATURE,
};
use selfuzz_core::harness::{
    compile_check, load_pass_list, sweep_checked, transformed_outputs, CompilerRegistry, FaultlineSpec, GenOptions,
    OutcomeKind,
};
use selfuzz_core::metrics::{emit_report, ingest_coverage_summary, ReportInput};
use selfuzz_core::triage::{
    bug_key_or_catch_all, export_registry, BugRegistry, CrashRecord, DEFAULT_FRAME_PREFIXES,
};
use serde_json::json;

use crate::CliError;

const REGISTRY_FILE: &str = "registry.jsonl";
const BUGS_DIR: &str = "bugs";
const CAMPAIGN_FILE: &str = "campaign.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn interval(secs: f64) -> anyhow::Result<Duration> {
    if secs.is_finite() && secs > 0.0 {
        Ok(Duration::from_secs_f64(secs))
    } else {
        Err(CliError::Usage(format!("--interval must be a positive number of seconds, got {secs}")).into())
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Programs of a corpus directory (one holding a manifest), or the split
/// units of a directory of raw test files.
fn load_programs(dir: &Path) -> anyhow::Result<Vec<TestProgram>> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} is not a directory", dir.display())).into());
    }
    if dir.join(MANIFEST_FILE).exists() {
        let store = load_corpus_dir(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
        return Ok(store.entries().iter().map(|p| (**p).clone()).collect());
    }
    let files = split_seed_dir(dir).with_context(|| format!("splitting {}", dir.display()))?;
    Ok(files.into_iter().flat_map(|f| f.units).map(|u| u.program).collect())
}

pub fn seed_split(input: &Path, out: &Path) -> anyhow::Result<()> {
    if !input.is_dir() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} is not a directory", input.display())).into());
    }
    let files = split_seed_dir(input).with_context(|| format!("splitting {}", input.display()))?;
    for f in &files {
        if let Some(u) = &f.unbalanced {
            log::warn!("{}: unbalanced braces from line {}, {} bytes skipped", f.path.display(), u.start_line, u.skipped_bytes);
        }
    }
    let units = files.iter().flat_map(|f| &f.units);
    let added = write_corpus_dir(out, units.clone().map(|u| (&u.program, Some(u.source.as_str()))))?;
    print_json(&json!({
        "files": files.len(),
        "programs": units.count(),
        "added": added,
        "corpus": out.display().to_string(),
    }));
    Ok(())
}

pub fn train(corpus: &Path, backend: &str, out: &Path, epochs: u32, rng_seed: u64) -> anyhow::Result<()> {
    let store = load_corpus_dir(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    let backend = BackendRegistry::default().build(backend)?;
    let trained = backend.train(store.entries(), epochs, rng_seed)?;
    write_file(out, trained.backend.snapshot()?)?;
    print_json(&json!({
        "programs": store.len(),
        "heldout_nll": trained.heldout_nll,
        "snapshot": out.display().to_string(),
    }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Backend kind the snapshot belongs to.
    #[arg(long, default_value = "ngram")]
    backend: String,
    /// Snapshot written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Corpus the seeds are drawn from.
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus directory receiving the candidates.
    #[arg(long)]
    out: PathBuf,
    /// Seeds to sample.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Argmax decoding from 10-token prefixes, one candidate per seed.
    #[arg(long)]
    greedy: bool,
    #[arg(long, alias = "prefix_len")]
    prefix_len: Option<usize>,
    #[arg(long, alias = "candidates_per_seed", default_value_t = 4)]
    candidates_per_seed: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, alias = "token_limit", default_value_t = 600)]
    token_limit: usize,
    #[arg(long, alias = "rng_seed", default_value_t = 0)]
    rng_seed: u64,
}

pub fn generate(args: &GenerateArgs) -> anyhow::Result<()> {
    let store = load_corpus_dir(&args.corpus).with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let snapshot = fs::read(&args.model).with_context(|| format!("reading model {}", args.model.display()))?;
    let model = BackendRegistry::default()
        .build(&args.backend)?
        .restore(&snapshot)
        .with_context(|| format!("restoring {}", args.model.display()))?;
    let cfg = GenerationConfig {
        temperature: if args.greedy { GREEDY_TEMPERATURE } else { args.temperature },
        prefix_len: args.prefix_len.unwrap_or(if args.greedy { 10 } else { 3 }),
        candidates_per_seed: if args.greedy { 1 } else { args.candidates_per_seed },
        token_limit: args.token_limit,
        rng_seed: args.rng_seed,
    };
    cfg.validate()?;
    let seeds = sample_fuzz_seeds(&store, args.samples, args.rng_seed)?;
    let mut programs = Vec::new();
    let mut skipped = 0;
    for seed in &seeds {
        let produced = if args.greedy {
            generate_greedy(&*model, seed, &cfg, 1).map(|p| vec![p])
        } else {
            generate_candidates(&*model, seed, &cfg, 1)
        };
        match produced {
            Ok(p) => programs.extend(p),
            Err(GeneratorError::SeedTooShort { id, have, need }) => {
                log::debug!("skipping {id}: {have} tokens, prefix needs {need}");
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let added = write_corpus_dir(&args.out, programs.iter().map(|p| (p, None)))?;
    print_json(&json!({
        "seeds": seeds.len(),
        "skipped_seeds": skipped,
        "generated": programs.len(),
        "added": added,
        "out": args.out.display().to_string(),
    }));
    Ok(())
}

fn origin(simulated: bool) -> DateTime<Utc> {
    if simulated {
        DateTime::<Utc>::UNIX_EPOCH
    } else {
        Utc::now()
    }
}

fn frame_prefixes(given: &[String]) -> Vec<String> {
    if given.is_empty() {
        DEFAULT_FRAME_PREFIXES.iter().map(|s| s.to_string()).collect()
    } else {
        given.to_vec()
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// `faultline:<spec.json>` or `exec:<path to mlir-opt>`.
    #[arg(long)]
    compiler: String,
    #[arg(long)]
    passes: PathBuf,
    /// Corpus directory, or a directory of raw .mlir files.
    #[arg(long)]
    corpus: PathBuf,
    /// Receives registry.jsonl, bugs/ and transformed/.
    #[arg(long)]
    out: PathBuf,
    /// Per-run timeout in seconds.
    #[arg(long, default_value_t = 10.0)]
    timeout: f64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long = "frame-prefix")]
    frame_prefix: Vec<String>,
}

pub fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    if args.workers == 0 || !(args.timeout.is_finite() && args.timeout > 0.0) {
        return Err(CliError::Usage("--workers and --timeout must be positive".into()).into());
    }
    let compiler = CompilerRegistry::default().build(&args.compiler)?;
    let passes = load_pass_list(&args.passes)?;
    let programs = load_programs(&args.corpus)?;
    let timeout = Duration::from_secs_f64(args.timeout);
    let prefixes = frame_prefixes(&args.frame_prefix);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.workers).build()?;
    let stamp = origin(compiler.is_simulated());

    let mut registry = BugRegistry::new();
    let mut transformed = Vec::new();
    let (mut valid, mut crashes, mut timeouts) = (0, 0, 0);
    for q in &programs {
        let check = compile_check(&*compiler, q, timeout)?;
        let mut crashed = Vec::new();
        match check.kind {
            OutcomeKind::Valid => {
                valid += 1;
                let runs = pool.install(|| sweep_checked(&*compiler, q, &passes, timeout))?;
                for (pass, o) in &runs {
                    match o.kind {
                        OutcomeKind::Crash => crashed.push((pass.flag.clone(), crash_stderr(o))),
                        OutcomeKind::Timeout => timeouts += 1,
                        _ => {}
                    }
                }
                transformed.extend(transformed_outputs(q, &runs).iter().filter_map(|t| transformed_program(t, 1)));
            }
            OutcomeKind::Crash => crashed.push((String::new(), crash_stderr(&check))),
            OutcomeKind::Timeout => timeouts += 1,
            OutcomeKind::Diagnostic => {}
        }
        crashes += crashed.len();
        for (pass_flag, stderr) in crashed {
            let rec = CrashRecord {
                program_id: q.id().clone(),
                bug_key: bug_key_or_catch_all(&stderr, &prefixes),
                pass_flag,
                stderr,
                first_seen: stamp,
                iteration: 0,
                program_text: q.text().to_string(),
            };
            if let Err(e) = registry.register_crash(rec) {
                log::debug!("{e}");
            }
        }
    }
    write_file(&args.out.join(REGISTRY_FILE), registry.to_jsonl())?;
    export_registry(&registry, &args.out.join(BUGS_DIR))?;
    let added = write_corpus_dir(&args.out.join("transformed"), transformed.iter().map(|p| (p, None)))?;
    print_json(&json!({
        "programs": programs.len(),
        "compile_valid": valid,
        "crashes": crashes,
        "timeouts": timeouts,
        "distinct_bugs": registry.bug_count(),
        "transformed_added": added,
    }));
    Ok(())
}

pub struct CampaignRun {
    pub cfg: CampaignConfig,
    pub compiler: String,
    pub backend: String,
    pub passes: PathBuf,
    pub seeds: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
    pub interval: Duration,
}

pub fn campaign(run: &CampaignRun) -> anyhow::Result<()> {
    let compiler = CompilerRegistry::default().build(&run.compiler)?;
    let backend = BackendRegistry::default().build(&run.backend)?;
    let passes = load_pass_list(&run.passes)?;
    let seeds = load_programs(&run.seeds)?;
    let campaign = Campaign::new(run.cfg.clone(), compiler, passes.clone(), backend)?.with_output(&run.out);

    let latest = latest_checkpoint(&run.out);
    let mut st = match (&latest, run.resume) {
        (Some(dir), true) => {
            log::info!("resuming from {}", dir.display());
            resume(dir, &campaign)?
        }
        (Some(_), false) => {
            return Err(CliError::Usage(format!(
                "{} already holds {CHECKPOINT_DIR}/; pass --resume to continue it or choose another --out",
                run.out.display()
            ))
            .into())
        }
        (None, _) => campaign.start(seeds.iter().cloned())?,
    };
    let mut cfg_bytes = serde_json::to_vec_pretty(&run.cfg)?;
    cfg_bytes.push(b'\n');
    write_file(&run.out.join(CONFIG_FILE), cfg_bytes)?;
    campaign.run(&mut st)?;
    let result = st.into_result();

    write_file(&run.out.join(REGISTRY_FILE), result.registry.to_jsonl())?;
    export_registry(&result.registry, &run.out.join(BUGS_DIR))?;
    let summary = json!({
        "config": run.cfg,
        "compiler": run.compiler,
        "backend": run.backend,
        "passes": passes.len(),
        "seeds": seeds.len(),
        "iterations": result.reports.len(),
        "corpus_size": result.corpus.len(),
        "distinct_bugs": result.registry.bug_count(),
        "elapsed_seconds": result.elapsed.as_secs_f64(),
    });
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    write_file(&run.out.join(CAMPAIGN_FILE), bytes)?;
    report(&run.out, &[], None, run.interval, &run.out.join("report"))?;
    print_json(&summary);
    Ok(())
}

fn read_registry(dir: &Path) -> anyhow::Result<BugRegistry> {
    let path = dir.join(REGISTRY_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    BugRegistry::from_jsonl(&text).with_context(|| format!("malformed input {}", path.display()))
}

fn label(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| dir.display().to_string())
}

/// Report input rebuilt from a campaign directory's latest checkpoint,
/// registry and corpus.
fn report_input(dir: &Path, interval: Duration) -> anyhow::Result<ReportInput> {
    let checkpoint = latest_checkpoint(dir)
        .ok_or_else(|| CliError::Corrupt(format!("{} has no {CHECKPOINT_DIR}/iter_<n> checkpoint", dir.display())))?;
    let meta = read_meta(&checkpoint)?;
    let registry = read_registry(dir)?;
    let corpus_dir = dir.join(CORPUS_DIR);
    let corpus = load_corpus_dir(&corpus_dir).with_context(|| format!("loading corpus {}", corpus_dir.display()))?;
    Ok(ReportInput {
        label: label(dir),
        reports: meta.reports,
        timeline: meta.timeline,
        elapsed: Duration::from_nanos(meta.elapsed_nanos),
        bugs: registry.buckets().map(|(k, members)| (k.clone(), members.len())).collect(),
        corpus: corpus_stats(&corpus),
        coverage: None,
        compare: Vec::new(),
        interval,
    })
}

pub fn report(
    campaign: &Path,
    compare: &[PathBuf],
    coverage: Option<&Path>,
    interval: Duration,
    out: &Path,
) -> anyhow::Result<()> {
    let mut input = report_input(campaign, interval)?;
    let mut taken: BTreeSet<String> = [input.label.clone()].into();
    for dir in compare {
        let base = label(dir);
        let mut name = base.clone();
        let mut n = 2;
        while !taken.insert(name.clone()) {
            name = format!("{base}-{n}");
            n += 1;
        }
        input.compare.push((name, read_registry(dir)?.keys().cloned().collect()));
    }
    if let Some(path) = coverage {
        input.coverage = Some(ingest_coverage_summary(path)?);
    }
    emit_report(&input, out)?;
    log::info!("report written to {}", out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TriageArgs {
    /// Stderr captures to key.
    stderr: Vec<PathBuf>,
    /// Crash registry (registry.jsonl) to export.
    #[arg(long, requires = "out")]
    registry: Option<PathBuf>,
    /// Export directory for --registry.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "frame-prefix")]
    frame_prefix: Vec<String>,
}

pub fn triage(args: &TriageArgs) -> anyhow::Result<()> {
    if args.stderr.is_empty() && args.registry.is_none() {
        return Err(CliError::Usage("give stderr files to key or --registry with --out".into()).into());
    }
    let prefixes = frame_prefixes(&args.frame_prefix);
    for path in &args.stderr {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let key = bug_key_or_catch_all(&text, &prefixes);
        println!("{}", json!({"file": path.display().to_string(), "key": key}));
    }
    if let (Some(path), Some(out)) = (&args.registry, &args.out) {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let registry = BugRegistry::from_jsonl(&text).with_context(|| format!("malformed input {}", path.display()))?;
        let index = export_registry(&registry, out)?;
        println!("{}", json!({"records": registry.record_count(), "distinct_bugs": index.len(), "out": out.display().to_string()}));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct FaultlineGenArgs {
    /// Corpus or raw .mlir directory the triggers are drawn from.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    passes: PathBuf,
    /// Spec file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, alias = "rng_seed", default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value_t = GenOptions::default().faults)]
    faults: usize,
    #[arg(long, default_value_t = GenOptions::default().rewrites)]
    rewrites: usize,
    #[arg(long, alias = "hang_passes", default_value_t = GenOptions::default().hang_passes)]
    hang_passes: usize,
    /// Minimum number of seed programs a trigger must occur in.
    #[arg(long, alias = "min_support", default_value_t = GenOptions::default().min_support)]
    min_support: usize,
    /// Faults whose trigger only a pass output can contain.
    #[arg(long, default_value_t = GenOptions::default().latent)]
    latent: usize,
}

pub fn faultline_gen(args: &FaultlineGenArgs) -> anyhow::Result<()> {
    if args.latent > args.faults {
        return Err(CliError::Usage("--latent cannot exceed --faults".into()).into());
    }
    let programs = load_programs(&args.seeds)?;
    let passes = load_pass_list(&args.passes)?;
    let opts = GenOptions {
        faults: args.faults,
        rewrites: args.rewrites,
        hang_passes: args.hang_passes,
        min_support: args.min_support,
        latent: args.latent,
    };
    let refs: Vec<&TestProgram> = programs.iter().collect();
    let spec = FaultlineSpec::generate(&refs, &passes, &opts, args.rng_seed);
    let mut bytes = serde_json::to_vec_pretty(&spec)?;
    bytes.push(b'\n');
    write_file(&args.out, bytes)?;
    print_json(&json!({
        "faults": spec.faults.len(),
        "rewrites": spec.rewrites.len(),
        "hang_passes": spec.hang_passes.len(),
        "out": args.out.display().to_string(),
    }));
    Ok(())
}

