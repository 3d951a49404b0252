// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::{Compiler, ExecutionOutcome, HarnessError, OutcomeKind, PassSpec};

const UNKNOWN_FLAG: &str = "Unknown command line argument";

/// A real compiler binary, invoked as `<binary> [pass] <file>`, one process
/// per run.
pub struct ExecCompiler {
    binary: PathBuf,
    label: String,
    env: Vec<(String, String)>,
    /// Pass flags the binary rejected; each is logged once.
    unrecognized: Mutex<BTreeSet<String>>,
}

impl ExecCompiler {
    pub fn new(binary: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let binary = binary.into();
        if !binary.is_file() {
            return Err(HarnessError::CompilerMissing(binary.display().to_string()));
        }
        Ok(ExecCompiler {
            label: format!("exec:{}", binary.display()),
            binary,
            unrecognized: Mutex::default(),
            env: vec![("LLVM_DISABLE_CRASH_REPORT".into(), "1".into()), ("LLVM_DISABLE_SYMBOLIZATION".into(), "0".into())],
        })
    }

    /// Sets (or overrides) an environment variable for every run.
    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        let key = key.into();
        self.env.retain(|(k, _)| *k != key);
        self.env.push((key, value.into()));
        self
    }

    pub fn binary(&self) -> &Path {
        &self.binary
    }

    /// Pass flags this build did not recognize so far. Their runs are
    /// Diagnostic outcomes.
    pub fn unrecognized_passes(&self) -> Vec<String> {
        self.unrecognized.lock().map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    fn spawn(&self, input: &Path, pass: Option<&PassSpec>) -> Result<Child, HarnessError> {
        let mut cmd = Command::new(&self.binary);
        if let Some(p) = pass {
            cmd.arg(&p.flag);
        }
        cmd.arg(input)
            .envs(self.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        cmd.spawn().map_err(|e| match e.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => {
                HarnessError::CompilerMissing(format!("{}: {e}", self.binary.display()))
            }
            _ => HarnessError::Io { path: self.binary.display().to_string(), source: e },
        })
    }
}

fn drain<R: Read + Send + 'static>(src: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = src {
            let _ = r.read_to_end(&mut buf);
        }
        buf
    })
}

// Kills the whole process group so grandchildren cannot keep the pipes open.
fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(unix)]
fn signal_of(status: &std::process::ExitStatus) -> Option<i32> {
    use std::os::unix::process::ExitStatusExt;
    status.signal()
}

#[cfg(not(unix))]
fn signal_of(_: &std::process::ExitStatus) -> Option<i32> {
    None
}

impl Compiler for ExecCompiler {
    fn name(&self) -> &str {
        &self.label
    }

    fn run(&self, text: &str, pass: Option<&PassSpec>, timeout: Duration) -> Result<ExecutionOutcome, HarnessError> {
        let io_err = |source| HarnessError::Io { path: "<temp input>".into(), source };
        let mut input = tempfile::Builder::new().suffix(".mlir").tempfile().map_err(io_err)?;
        input.write_all(text.as_bytes()).map_err(io_err)?;
        input.flush().map_err(io_err)?;

        let start = Instant::now();
        let mut child = self.spawn(input.path(), pass)?;
        let out = drain(child.stdout.take());
        let err = drain(child.stderr.take());
        let status = child.wait_timeout(timeout).map_err(io_err)?;
        let timed_out = status.is_none();
        let status = match status {
            Some(s) => s,
            None => {
                kill_tree(&mut child);
                child.wait().map_err(io_err)?
            }
        };
        let wall = start.elapsed();
        let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
        let outcome = ExecutionOutcome::new(status.code(), signal_of(&status), stdout, stderr, wall, timed_out);
        if let Some(p) = pass.filter(|_| outcome.kind == OutcomeKind::Diagnostic && outcome.stderr.contains(UNKNOWN_FLAG)) {
            if self.unrecognized.lock().is_ok_and(|mut s| s.insert(p.flag.clone())) {
                log::warn!("{} does not recognize {}; its runs count as diagnostics", self.binary.display(), p.flag);
            }
        }
        Ok(outcome)
    }
}
