// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use super::{BugRegistry, KeyKind, TriageError};

pub const BUG_INDEX_FILE: &str = "bugs.jsonl";

/// One line of `bugs.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugIndexEntry {
    pub bug_id: usize,
    pub key_kind: KeyKind,
    pub key_value: String,
    pub occurrences: usize,
    pub first_seen_iso8601: String,
    pub first_seen_iteration: u32,
    pub reproducer_path: String,
    pub pass_flag: String,
    pub low_confidence: bool,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), TriageError> {
    fs::write(path, contents).map_err(|source| TriageError::Io { path: path.display().to_string(), source })
}

/// Writes `bug-NNNN/` per bucket (reproducer, pass, stderr, key, first-seen
/// iteration) and the `bugs.jsonl` index. Output depends only on the registry.
pub fn export_registry(reg: &BugRegistry, dir: &Path) -> Result<Vec<BugIndexEntry>, TriageError> {
    fs::create_dir_all(dir).map_err(|source| TriageError::Io { path: dir.display().to_string(), source })?;
    let mut index = Vec::new();
    let mut lines = String::new();
    for (i, (key, members)) in reg.buckets().enumerate() {
        let first = members[0];
        let bug_id = i + 1;
        let name = format!("bug-{bug_id:04}");
        let bug_dir = dir.join(&name);
        fs::create_dir_all(&bug_dir).map_err(|source| TriageError::Io { path: bug_dir.display().to_string(), source })?;
        write(&bug_dir.join("reproducer.mlir"), &first.program_text)?;
        write(&bug_dir.join("pass.txt"), format!("{}\n", first.pass_flag))?;
        write(&bug_dir.join("stderr.txt"), &first.stderr)?;
        write(&bug_dir.join("key.txt"), format!("{:?}\n{}\n", key.kind, key.value))?;
        write(&bug_dir.join("iteration.txt"), format!("{}\n", first.iteration))?;
        let entry = BugIndexEntry {
            bug_id,
            key_kind: key.kind,
            key_value: key.value.clone(),
            occurrences: members.len(),
            first_seen_iso8601: first.first_seen.to_rfc3339_opts(SecondsFormat::Millis, true),
            first_seen_iteration: first.iteration,
            reproducer_path: format!("{name}/reproducer.mlir"),
            pass_flag: first.pass_flag.clone(),
            low_confidence: key.low_confidence,
        };
        lines.push_str(&serde_json::to_string(&entry).expect("index entries serialize"));
        lines.push('\n');
        index.push(entry);
    }
    write(&dir.join(BUG_INDEX_FILE), lines)?;
    Ok(index)
}
