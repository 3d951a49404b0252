// SPDX-License-Identifier: Apache-2.0

//! Deterministic toy compiler with injectable crashes.
//!
//! A program is valid when its first token is a known keyword and its braces
//! balance. A valid program run under a pass crashes when the pass has an
//! injected fault whose trigger token occurs in the program; otherwise the
//! pass "succeeds" and prints the program with that pass's token rewrites
//! applied. Run times are simulated, so nothing here sleeps.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Compiler, ExecutionOutcome, HarnessError, PassSpec, DEFAULT_TIMEOUT};
use crate::corpus::{detokenize, tokenize, TestProgram, Token};
use crate::seeding::derive_seed;
use crate::triage::normalize_assertion;

const BASE_TIME: Duration = Duration::from_millis(8);
const PER_TOKEN_TIME: Duration = Duration::from_micros(40);
const SIGABRT: i32 = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    /// `None` crashes the pass-free validity run itself.
    pub pass: Option<String>,
    pub trigger_token: String,
    pub crash_signature: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub from_token: String,
    pub to_token: String,
    /// Restricts the rewrite to one pass; unrestricted rewrites apply under all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultlineSpec {
    pub grammar_keywords: Vec<String>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub rewrites: Vec<Rewrite>,
    #[serde(default)]
    pub hang_passes: Vec<String>,
}

impl FaultlineSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        let spec: FaultlineSpec =
            serde_json::from_str(&text).map_err(|e| HarnessError::BadSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::BadSpec(m));
        if self.grammar_keywords.is_empty() {
            return bad("no grammar keywords".into());
        }
        for f in &self.faults {
            if f.trigger_token.is_empty() || f.trigger_token.chars().any(char::is_whitespace) {
                return bad(format!("trigger {:?} is not a single token", f.trigger_token));
            }
            if f.crash_signature.is_empty()
                || normalize_assertion(&f.crash_signature) != f.crash_signature
                || f.crash_signature.contains("' failed")
            {
                return bad(format!("signature {:?} is not in normal form", f.crash_signature));
            }
        }
        Ok(())
    }

    /// Distinct signatures in spec order.
    pub fn signatures(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.faults
            .iter()
            .map(|f| f.crash_signature.as_str())
            .filter(|s| seen.insert(*s))
            .collect()
    }

    /// Random spec over a corpus: leading keywords are the corpus's first
    /// tokens, triggers are operation names that occur in it.
    pub fn generate(programs: &[&TestProgram], passes: &[PassSpec], opts: &GenOptions, rng_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut keywords = BTreeMap::new();
        let mut support: BTreeMap<&str, usize> = BTreeMap::new();
        for p in programs {
            if let Some(t) = first_code_token(p.tokens()) {
                keywords.insert(t.as_str().to_string(), ());
            }
            let distinct: HashSet<&str> = p.tokens().iter().map(Token::as_str).filter(|t| is_op_name(t)).collect();
            for t in distinct {
                *support.entry(t).or_default() += 1;
            }
        }
        let min_support = opts.min_support.min(support.values().copied().max().unwrap_or(0)).max(1);
        let ops: Vec<&str> = support.iter().filter(|(_, &n)| n >= min_support).map(|(t, _)| *t).collect();

        let mut pass_pool: Vec<&PassSpec> = passes.iter().collect();
        pass_pool.shuffle(&mut rng);
        let mut faults = Vec::new();
        let mut rewrites = Vec::new();
        let latent_from = opts.faults.saturating_sub(opts.latent);
        if !ops.is_empty() {
            for (i, pass) in pass_pool.iter().take(opts.faults).enumerate() {
                let op = ops[rng.gen_range(0..ops.len())];
                let template = SIGNATURE_TEMPLATES[rng.gen_range(0..SIGNATURE_TEMPLATES.len())];
                let trigger = if i >= latent_from && pass_pool.len() > 1 {
                    // The trigger only ever appears in the output of another
                    // pass's rewrite of `op`.
                    let lowered = format!("{op}_lowered");
                    let via = loop {
                        let p = pass_pool[rng.gen_range(0..pass_pool.len())];
                        if p.flag != pass.flag {
                            break p;
                        }
                    };
                    rewrites.push(Rewrite { from_token: op.to_string(), to_token: lowered.clone(), pass: Some(via.flag.clone()) });
                    lowered
                } else {
                    op.to_string()
                };
                faults.push(Fault {
                    pass: Some(pass.flag.clone()),
                    trigger_token: trigger,
                    crash_signature: format!("{template} && \"fault {i:02}\""),
                });
            }
        }
        if ops.len() >= 2 {
            for _ in 0..opts.rewrites {
                let from = ops[rng.gen_range(0..ops.len())];
                let to = loop {
                    let t = ops[rng.gen_range(0..ops.len())];
                    if t != from {
                        break t;
                    }
                };
                let pass = pass_pool.get(rng.gen_range(0..pass_pool.len().max(1))).map(|p| p.flag.clone());
                rewrites.push(Rewrite { from_token: from.to_string(), to_token: to.to_string(), pass });
            }
        }
        let hang_passes = pass_pool
            .iter()
            .skip(opts.faults)
            .take(opts.hang_passes)
            .map(|p| p.flag.clone())
            .collect();
        FaultlineSpec { grammar_keywords: keywords.into_keys().collect(), faults, rewrites, hang_passes }
    }
}

const SIGNATURE_TEMPLATES: [&str; 8] = [
    "op->getNumOperands() == 2",
    "isa<ShapedType>(type)",
    "!region.empty()",
    "succeeded(verify(op))",
    "idx < getNumResults()",
    "m != nullptr",
    "type.hasRank()",
    "block->mightHaveTerminator()",
];

/// Knobs for [`FaultlineSpec::generate`].
#[derive(Clone, Debug)]
pub struct GenOptions {
    pub faults: usize,
    pub rewrites: usize,
    pub hang_passes: usize,
    /// Minimum number of corpus programs a trigger must occur in.
    pub min_support: usize,
    /// How many of the faults get a trigger that no input contains: a fresh
    /// op name produced only by a pass-restricted rewrite.
    pub latent: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions { faults: 12, rewrites: 8, hang_passes: 0, min_support: 2, latent: 4 }
    }
}

fn is_op_name(t: &str) -> bool {
    let mut chars = t.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && t.contains('.')
        && !t.ends_with('.')
        && t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn first_code_token(tokens: &[Token]) -> Option<&Token> {
    tokens.iter().find(|t| !t.is_newline() && !t.as_str().starts_with("//"))
}

/// The spec, indexed for lookups.
pub struct FaultlineCompiler {
    spec: FaultlineSpec,
    label: String,
    keywords: HashSet<String>,
    faults: HashMap<Option<String>, Vec<usize>>,
    rewrites: HashMap<Option<String>, Vec<usize>>,
    hangs: HashSet<String>,
}

struct Parsed {
    tokens: Vec<Token>,
    diagnostic: Option<String>,
}

impl FaultlineCompiler {
    pub fn new(spec: FaultlineSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        Ok(Self::index(spec))
    }

    fn index(spec: FaultlineSpec) -> Self {
        let mut faults: HashMap<Option<String>, Vec<usize>> = HashMap::new();
        for (i, f) in spec.faults.iter().enumerate() {
            faults.entry(f.pass.clone()).or_default().push(i);
        }
        let mut rewrites: HashMap<Option<String>, Vec<usize>> = HashMap::new();
        for (i, r) in spec.rewrites.iter().enumerate() {
            rewrites.entry(r.pass.clone()).or_default().push(i);
        }
        FaultlineCompiler {
            keywords: spec.grammar_keywords.iter().cloned().collect(),
            hangs: spec.hang_passes.iter().cloned().collect(),
            label: "faultline".into(),
            faults,
            rewrites,
            spec,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn spec(&self) -> &FaultlineSpec {
        &self.spec
    }

    fn parse(&self, text: &str) -> Parsed {
        let tokens = tokenize(text);
        let diagnostic = self.check_grammar(&tokens);
        Parsed { tokens, diagnostic }
    }

    fn check_grammar(&self, tokens: &[Token]) -> Option<String> {
        let Some(first) = first_code_token(tokens) else {
            return Some("<stdin>:1:1: error: expected top-level operation".into());
        };
        if !self.keywords.contains(first.as_str()) {
            return Some(format!("<stdin>:1:1: error: custom op '{}' is unknown", first.as_str()));
        }
        let mut depth = 0i64;
        let mut line = 1;
        for t in tokens {
            if t.is_newline() {
                line += 1;
            } else if t.is_open_brace() {
                depth += 1;
            } else if t.is_close_brace() {
                depth -= 1;
                if depth < 0 {
                    return Some(format!("<stdin>:{line}:1: error: unexpected '}}'"));
                }
            }
        }
        (depth != 0).then(|| format!("<stdin>:{line}:1: error: expected '}}' to close region"))
    }

    fn simulated_time(tokens: &[Token]) -> Duration {
        BASE_TIME + PER_TOKEN_TIME * tokens.len() as u32
    }

    fn outcome(&self, parsed: &Parsed, present: &HashSet<&str>, pass: Option<&str>, timeout: Duration) -> ExecutionOutcome {
        let wall = Self::simulated_time(&parsed.tokens).min(timeout);
        if let Some(diag) = &parsed.diagnostic {
            return ExecutionOutcome::new(Some(1), None, String::new(), format!("{diag}\n"), wall, false);
        }
        if pass.is_some_and(|p| self.hangs.contains(p)) {
            return ExecutionOutcome::new(None, Some(9), String::new(), String::new(), timeout, true);
        }
        let key = pass.map(str::to_string);
        if let Some(idx) = self.faults.get(&key) {
            if let Some(f) = idx.iter().map(|&i| &self.spec.faults[i]).find(|f| present.contains(f.trigger_token.as_str())) {
                let stderr = crash_report(pass, &f.crash_signature);
                return ExecutionOutcome::new(None, Some(SIGABRT), String::new(), stderr, wall, false);
            }
        }
        let stdout = match pass {
            Some(_) => self.rewrite(&parsed.tokens, &key),
            None => detokenize(&parsed.tokens),
        };
        ExecutionOutcome::new(Some(0), None, stdout + "\n", String::new(), wall, false)
    }

    fn rewrite(&self, tokens: &[Token], pass: &Option<String>) -> String {
        let rules: Vec<&Rewrite> = [self.rewrites.get(&None), self.rewrites.get(pass)]
            .into_iter()
            .flatten()
            .flatten()
            .map(|&i| &self.spec.rewrites[i])
            .collect();
        if rules.is_empty() {
            return detokenize(tokens);
        }
        let out: Vec<Token> = tokens
            .iter()
            .map(|t| match rules.iter().find(|r| r.from_token == t.as_str()) {
                Some(r) => Token::new(r.to_token.as_str()),
                None => t.clone(),
            })
            .collect();
        detokenize(&out)
    }
}

fn present_set(tokens: &[Token]) -> HashSet<&str> {
    tokens.iter().map(Token::as_str).collect()
}

impl Compiler for FaultlineCompiler {
    fn name(&self) -> &str {
        &self.label
    }

    fn run(&self, text: &str, pass: Option<&PassSpec>, timeout: Duration) -> Result<ExecutionOutcome, HarnessError> {
        let parsed = self.parse(text);
        let present = present_set(&parsed.tokens);
        Ok(self.outcome(&parsed, &present, pass.map(|p| p.flag.as_str()), timeout))
    }

    fn run_passes(&self, text: &str, passes: &[PassSpec], timeout: Duration) -> Result<Vec<ExecutionOutcome>, HarnessError> {
        let parsed = self.parse(text);
        let present = present_set(&parsed.tokens);
        Ok(passes.iter().map(|p| self.outcome(&parsed, &present, Some(&p.flag), timeout)).collect())
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

/// One simulated run under the default timeout.
pub fn faultline_compile(spec: &FaultlineSpec, text: &str, pass_flag: Option<&str>) -> ExecutionOutcome {
    let compiler = FaultlineCompiler::index(spec.clone());
    let parsed = compiler.parse(text);
    let present = present_set(&parsed.tokens);
    compiler.outcome(&parsed, &present, pass_flag, DEFAULT_TIMEOUT)
}

fn pass_class(pass: Option<&str>) -> String {
    let Some(flag) = pass else {
        return "detail::Parser".into();
    };
    let mut name: String = flag
        .trim_start_matches('-')
        .split(|c: char| c == '-' || c == '_')
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
        })
        .collect();
    name.push_str("Pass");
    name
}

fn crash_report(pass: Option<&str>, signature: &str) -> String {
    let flag = pass.unwrap_or("");
    let h = derive_seed(&[flag.as_bytes(), signature.as_bytes()]);
    let class = pass_class(pass);
    let base = 0x5500_0000_0000u64 | (h & 0xff_ffff_f000);
    let line = 100 + h % 3900;
    let frames = [
        "llvm::sys::PrintStackTrace(llvm::raw_ostream&, int)".to_string(),
        "llvm::sys::RunSignalHandlers()".to_string(),
        format!("mlir::{class}::runOnOperation()"),
        "mlir::detail::OpToOpPassAdaptor::run(mlir::Pass*, mlir::Operation*, mlir::AnalysisManager, bool, unsigned int)".to_string(),
        "mlir::PassManager::run(mlir::Operation*)".to_string(),
        "main".to_string(),
    ];
    let mut out = format!(
        "mlir-opt: /work/llvm-project/mlir/lib/Transforms/{class}.cpp:{line}: void mlir::{class}::runOnOperation(): Assertion '{signature}' failed.\n\
         PLEASE submit a bug report to https://github.com/llvm/llvm-project/issues/ and include the crash backtrace.\n\
         Stack dump:\n\
         0.\tProgram arguments: mlir-opt {flag} input.mlir\n"
    );
    for (i, f) in frames.iter().enumerate() {
        out.push_str(&format!(" #{i} 0x{:016x} {f}\n", base + 0x1a0 * (i as u64 + 1)));
    }
    out
}
