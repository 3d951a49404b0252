// SPDX-License-Identifier: Apache-2.0

//! On-disk corpus layout: `<dir>/<provenance>/<id>.mlir` plus an append-only
//! `manifest.jsonl` index.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{split_seed_file, CorpusError, CorpusStore, ProgramId, Provenance, SeedUnit, TestProgram, UnbalancedDelimiters};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: ProgramId,
    pub provenance: Provenance,
    pub origin_iteration: u32,
    pub parent_id: Option<ProgramId>,
    pub token_count: usize,
    pub sha256: String,
}

impl ManifestEntry {
    pub fn for_program(p: &TestProgram) -> Self {
        ManifestEntry {
            id: p.id().clone(),
            provenance: p.provenance(),
            origin_iteration: p.origin_iteration(),
            parent_id: p.parent_id().cloned(),
            token_count: p.tokens().len(),
            sha256: hex::encode(p.content_hash()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedManifest {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Appends programs not yet listed in `dir`'s manifest. `raw` text, when
/// given, is what lands in the `.mlir` file (seed slices keep their original
/// formatting); otherwise the program's canonical text is written.
///
/// Returns the number of entries appended.
pub fn write_corpus_dir<'a>(
    dir: &Path,
    programs: impl IntoIterator<Item = (&'a TestProgram, Option<&'a str>)>,
) -> Result<usize, CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut known: HashSet<String> =
        read_manifest(&manifest_path)?.into_iter().map(|e| e.sha256).collect();
    let mut manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&manifest_path)
        .map_err(io_err(&manifest_path))?;

    let mut appended = 0;
    for (program, raw) in programs {
        let entry = ManifestEntry::for_program(program);
        if !known.insert(entry.sha256.clone()) {
            continue;
        }
        let sub = dir.join(program.provenance().dir_name());
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        let file = sub.join(format!("{}.mlir", program.id()));
        fs::write(&file, raw.unwrap_or(program.text())).map_err(io_err(&file))?;
        let mut line = serde_json::to_string(&entry).expect("manifest entry serializes");
        line.push('\n');
        manifest.write_all(line.as_bytes()).map_err(io_err(&manifest_path))?;
        appended += 1;
    }
    Ok(appended)
}

/// Loads every manifest entry of `dir` into a fresh store, verifying content
/// hashes.
pub fn load_corpus_dir(dir: &Path) -> Result<CorpusStore, CorpusError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CorpusError::Io {
            path: manifest_path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "manifest missing"),
        });
    }
    let mut store = CorpusStore::new();
    for (i, entry) in read_manifest(&manifest_path)?.into_iter().enumerate() {
        let file = dir.join(entry.provenance.dir_name()).join(format!("{}.mlir", entry.id));
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        let malformed = |message: String| CorpusError::MalformedManifest {
            path: manifest_path.display().to_string(),
            line: i + 1,
            message,
        };
        let program = TestProgram::from_text(
            entry.id.clone(),
            &text,
            entry.provenance,
            entry.origin_iteration,
            entry.parent_id.clone(),
        )
        .map_err(|e| malformed(e.to_string()))?;
        if hex::encode(program.content_hash()) != entry.sha256 {
            return Err(malformed(format!("content hash mismatch for {}", entry.id)));
        }
        store.add_program(program);
    }
    Ok(store)
}

/// Seed units of one file under a seed directory.
#[derive(Clone, Debug)]
pub struct SeedFile {
    pub path: PathBuf,
    pub units: Vec<SeedUnit>,
    pub unbalanced: Option<UnbalancedDelimiters>,
}

fn collect_mlir(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_mlir(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "mlir") {
            out.push(path);
        }
    }
    Ok(())
}

/// Splits every `.mlir` file below `dir`, in path order. Unit ids are the
/// file's relative path with separators and the extension turned into dots,
/// followed by the unit index.
pub fn split_seed_dir(dir: &Path) -> Result<Vec<SeedFile>, CorpusError> {
    let mut paths = Vec::new();
    collect_mlir(dir, &mut paths)?;
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let rel = path.strip_prefix(dir).unwrap_or(&path).with_extension("");
            let prefix: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            let report = split_seed_file(&text, &prefix.join("."));
            Ok(SeedFile { path, units: report.units, unbalanced: report.unbalanced })
        })
        .collect()
}
