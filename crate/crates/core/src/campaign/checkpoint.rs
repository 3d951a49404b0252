// SPDX-License-Identifier: Apache-2.0

//! Per-iteration checkpoints.
//!
//! ```text
//! <out>/corpus/                      append-only corpus directory
//! <out>/checkpoints/iter_<n>/
//!     corpus.manifest                corpus entries, in corpus order
//!     model.snap                     backend snapshot
//!     registry.jsonl                 crash records, in registration order
//!     rng.state                      {rng_seed, next_iteration}
//!     meta.json                      reports, timeline, clock, file hashes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Campaign, CampaignError, CampaignState, Clock, IterationReport, Mode, TimelineEvent};
use crate::corpus::{load_corpus_dir, write_corpus_dir, CorpusStore, ManifestEntry};
use crate::triage::BugRegistry;

pub const CORPUS_DIR: &str = "corpus";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const MANIFEST: &str = "corpus.manifest";
const MODEL: &str = "model.snap";
const REGISTRY: &str = "registry.jsonl";
const RNG: &str = "rng.state";
const META: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: u32,
    pub mode: Mode,
    pub backend: String,
    pub compiler: String,
    pub virtual_clock: bool,
    pub elapsed_nanos: u64,
    pub origin: DateTime<Utc>,
    pub reports: Vec<IterationReport>,
    pub timeline: Vec<TimelineEvent>,
    /// sha256 of every other checkpoint file.
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    rng_seed: u64,
    next_iteration: u32,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io { path: path.display().to_string(), source }
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checkpoint_dir(out: &Path, iteration: u32) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("iter_{iteration}"))
}

/// Writes the checkpoint of `st.iteration` under `out`.
pub fn write_checkpoint(out: &Path, campaign: &Campaign, st: &CampaignState) -> Result<PathBuf, CampaignError> {
    write_corpus_dir(&out.join(CORPUS_DIR), st.corpus.entries().iter().map(|p| (&**p, None)))?;
    let dir = checkpoint_dir(out, st.iteration);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let mut manifest = String::new();
    for p in st.corpus.entries() {
        manifest.push_str(&serde_json::to_string(&ManifestEntry::for_program(p)).expect("manifest serializes"));
        manifest.push('\n');
    }
    let model = match &st.model {
        Some(m) => m.snapshot()?,
        None => Vec::new(),
    };
    let rng = serde_json::to_vec(&RngState { rng_seed: campaign.cfg.rng_seed, next_iteration: st.iteration + 1 })
        .expect("rng state serializes");
    let files: [(&str, Vec<u8>); 4] =
        [(MANIFEST, manifest.into_bytes()), (MODEL, model), (REGISTRY, st.registry.to_jsonl().into_bytes()), (RNG, rng)];
    let mut hashes = BTreeMap::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        hashes.insert(name.to_string(), sha(bytes));
    }
    let meta = CheckpointMeta {
        iteration: st.iteration,
        mode: campaign.cfg.mode,
        backend: campaign.backend.name().to_string(),
        compiler: campaign.compiler.name().to_string(),
        virtual_clock: matches!(st.clock, Clock::Virtual { .. }),
        elapsed_nanos: st.clock.elapsed().as_nanos() as u64,
        origin: st.origin,
        reports: st.reports.clone(),
        timeline: st.timeline.clone(),
        files: hashes,
    };
    let path = dir.join(META);
    fs::write(&path, serde_json::to_vec_pretty(&meta).expect("meta serializes")).map_err(io_err(&path))?;
    Ok(dir)
}

fn corrupt(dir: &Path, reason: impl Into<String>) -> CampaignError {
    CampaignError::CorruptCheckpoint { path: dir.display().to_string(), reason: reason.into() }
}

fn read_verified(dir: &Path, meta: &CheckpointMeta, name: &str) -> Result<Vec<u8>, CampaignError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| corrupt(dir, format!("{name}: {e}")))?;
    match meta.files.get(name) {
        Some(h) if *h == sha(&bytes) => Ok(bytes),
        Some(_) => Err(corrupt(dir, format!("{name} does not match its recorded hash"))),
        None => Err(corrupt(dir, format!("{name} has no recorded hash"))),
    }
}

/// Reads only the metadata of a checkpoint.
pub fn read_meta(dir: &Path) -> Result<CheckpointMeta, CampaignError> {
    let bytes = fs::read(dir.join(META)).map_err(|e| corrupt(dir, format!("{META}: {e}")))?;
    serde_json::from_slice(&bytes).map_err(|e| corrupt(dir, format!("{META}: {e}")))
}

/// Restores the state saved in checkpoint `dir`, which must sit at
/// `<out>/checkpoints/iter_<n>`. The campaign's config must carry the same
/// rng seed.
pub fn resume(dir: &Path, campaign: &Campaign) -> Result<CampaignState, CampaignError> {
    let meta = read_meta(dir)?;
    let rng: RngState = serde_json::from_slice(&read_verified(dir, &meta, RNG)?)
        .map_err(|e| corrupt(dir, format!("{RNG}: {e}")))?;
    if rng.rng_seed != campaign.cfg.rng_seed {
        return Err(CampaignError::ConfigInvalid(format!(
            "checkpoint was taken with rng_seed {}, config has {}",
            rng.rng_seed, campaign.cfg.rng_seed
        )));
    }
    if rng.next_iteration != meta.iteration + 1 {
        return Err(corrupt(dir, "rng state and metadata disagree on the iteration"));
    }

    let manifest = String::from_utf8(read_verified(dir, &meta, MANIFEST)?).map_err(|e| corrupt(dir, e.to_string()))?;
    let out = dir
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| corrupt(dir, "not inside <out>/checkpoints"))?;
    let stored = load_corpus_dir(&out.join(CORPUS_DIR)).map_err(|e| corrupt(dir, e.to_string()))?;
    let mut corpus = CorpusStore::new();
    for (i, line) in manifest.lines().enumerate() {
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| corrupt(dir, format!("{MANIFEST} line {}: {e}", i + 1)))?;
        let p = stored
            .get(&entry.id)
            .filter(|p| hex::encode(p.content_hash()) == entry.sha256)
            .ok_or_else(|| corrupt(dir, format!("corpus entry {} missing or altered", entry.id)))?;
        corpus.add_shared(p.clone());
    }

    let registry = BugRegistry::from_jsonl(
        std::str::from_utf8(&read_verified(dir, &meta, REGISTRY)?).map_err(|e| corrupt(dir, e.to_string()))?,
    )
    .map_err(|e| corrupt(dir, e.to_string()))?;
    let snap = read_verified(dir, &meta, MODEL)?;
    let model = if snap.is_empty() { None } else { Some(campaign.backend.restore(&snap)?) };

    Ok(CampaignState {
        corpus,
        registry,
        model,
        iteration: meta.iteration,
        reports: meta.reports,
        timeline: meta.timeline,
        origin: meta.origin,
        clock: Clock::resumed(meta.virtual_clock, Duration::from_nanos(meta.elapsed_nanos)),
    })
}

/// The highest-numbered checkpoint under `out`, if any.
pub fn latest_checkpoint(out: &Path) -> Option<PathBuf> {
    let entries = fs::read_dir(out.join(CHECKPOINT_DIR)).ok()?;
    entries
        .filter_map(|e| {
            let e = e.ok()?;
            let n: u32 = e.file_name().to_str()?.strip_prefix("iter_")?.parse().ok()?;
            Some((n, e.path()))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}
