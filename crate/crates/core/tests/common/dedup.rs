// SPDX-License-Identifier: Apache-2.0

//! Synthetic crash reports with known ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Assertion,
    /// An assertion plus frames of some trace class.
    Mixed,
    TraceOnly,
    SignalOnly,
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub stderr: String,
    /// Ground-truth root cause.
    pub class: String,
    pub flavor: Flavor,
    /// Normalized assertion, for assertion-bearing fixtures.
    pub assertion: Option<String>,
}

const ASSERTIONS: [&str; 12] = [
    "op->getNumOperands() == 2",
    "isa<ShapedType>(type)",
    "!region.empty() && \"region must not be empty\"",
    "succeeded(verify(op))",
    "idx < getNumResults()",
    "m != nullptr",
    "type.hasRank()",
    "block->mightHaveTerminator()",
    "getOperation()->getNumRegions() == 1",
    "isa<X>(Val) && \"cast<Ty>() argument of incompatible type!\"",
    "!hasTrait<OpTrait::ZeroResults>()",
    "index < size()",
];

const TRACE_FRAMES: [&[&str]; 8] = [
    &["mlir::tosa::ArgMaxOp::verify()", "mlir::OpState::verifyInvariants()"],
    &["mlir::detail::ConversionPatternRewriterImpl::notifyOpReplaced(mlir::Operation*)", "mlir::applyPartialConversion(mlir::Operation*)"],
    &["mlir::bufferization::runOneShotBufferize(mlir::Operation*)"],
    &["mlir::affine::AffineForOp::getConstantLowerBound()", "mlir::affine::loopUnrollByFactor(mlir::affine::AffineForOp, unsigned long)"],
    &["mlir::Block::getTerminator()", "mlir::scf::ForOp::getBody()", "mlir::scf::forallToForLoop()"],
    &["mlir::vector::TransferReadOp::getPermutationMap()", "mlir::vector::populateVectorTransferLoweringPatterns()"],
    &["mlir::linalg::LinalgOp::getStaticLoopRanges()"],
    &["mlir::sparse_tensor::SparseTensorEncodingAttr::getLvlRank() const", "mlir::sparse_tensor::getSparseTensorEncoding(mlir::Type)"],
];

const SIGNAL_TAILS: [&[&str]; 5] = [
    &["Segmentation fault (core dumped)"],
    &["terminate called after throwing an instance of 'std::bad_alloc'", "what():  std::bad_alloc", "Aborted (core dumped)"],
    &["Illegal instruction"],
    &["double free or corruption (out)", "Aborted"],
    &["Floating point exception"],
];

const NOISE_FRAMES: [&str; 6] = [
    "llvm::sys::PrintStackTrace(llvm::raw_ostream&, int)",
    "llvm::sys::RunSignalHandlers()",
    "SignalHandler(int)",
    "__restore_rt",
    "std::_Function_handler<void (), main::$_0>::_M_invoke(std::_Any_data const&)",
    "main",
];

fn spaced(rng: &mut ChaCha8Rng, expr: &str) -> String {
    expr.split(' ')
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(if rng.gen_bool(0.3) { "  " } else { " " })
}

fn assertion_line(rng: &mut ChaCha8Rng, expr: &str) -> String {
    let file = ["mlir/lib/IR/Operation.cpp", "/src/llvm/include/llvm/Support/Casting.h", "Dialect/Tosa/IR/TosaOps.cpp"]
        .choose(rng)
        .unwrap();
    let line = rng.gen_range(10..5000);
    let e = spaced(rng, expr);
    match rng.gen_range(0..4) {
        0 => format!("mlir-opt: {file}:{line}: void f(): Assertion `{e}' failed."),
        1 => format!("mlir-opt: {file}:{line}: auto g(): Assertion '{e}' failed."),
        2 => format!("Assertion failed: ({e}), function verify, file {file}, line {line}."),
        _ => format!("{file}:{line}: error: assert({e})"),
    }
}

fn frame_line(rng: &mut ChaCha8Rng, i: usize, sym: &str) -> String {
    let addr: u64 = rng.gen_range(0x5500_0000_0000..0x5600_0000_0000);
    match rng.gen_range(0..4) {
        0 => format!(" #{i} 0x{addr:016x} {sym}"),
        1 => format!(" #{i} 0x{addr:016x} {sym} /work/llvm/mlir/lib/X.cpp:{}:{}", rng.gen_range(1..900), rng.gen_range(1..80)),
        2 => format!(" #{i} 0x{addr:016x} {sym} (/usr/lib/libMLIR.so.19+0x{:x})", rng.gen_range(0x1000..0xfffff)),
        _ => format!(" #{i} 0x{addr:016x} in {sym} + {}", rng.gen_range(1..400)),
    }
}

fn trace(rng: &mut ChaCha8Rng, class: usize) -> Vec<String> {
    let mut syms: Vec<&str> = NOISE_FRAMES[..rng.gen_range(0..3)].to_vec();
    for f in TRACE_FRAMES[class] {
        syms.push(f);
        if rng.gen_bool(0.4) {
            syms.push(["llvm::function_ref<void ()>::callback_fn", "std::vector<int>::at(unsigned long)"].choose(rng).unwrap());
        }
    }
    syms.push("main");
    syms.iter().enumerate().map(|(i, s)| frame_line(rng, i, s)).collect()
}

fn header(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut h = Vec::new();
    if rng.gen_bool(0.5) {
        h.push("PLEASE submit a bug report to https://github.com/llvm/llvm-project/issues/ and include the crash backtrace.".into());
    }
    if rng.gen_bool(0.5) {
        h.push("Stack dump:".into());
        h.push(format!("0.\tProgram arguments: mlir-opt -pass-{} in.mlir", rng.gen_range(0..50)));
    }
    h
}

/// `n` fixtures drawn from 12 assertion, 8 trace and 5 signal classes.
pub fn fixtures(n: usize, rng_seed: u64) -> Vec<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..n)
        .map(|_| {
            let flavor = [Flavor::Assertion, Flavor::Mixed, Flavor::TraceOnly, Flavor::SignalOnly][rng.gen_range(0..4)];
            let mut lines = Vec::new();
            let (class, assertion) = match flavor {
                Flavor::Assertion | Flavor::Mixed => {
                    let a = rng.gen_range(0..ASSERTIONS.len());
                    lines.push(assertion_line(&mut rng, ASSERTIONS[a]));
                    lines.extend(header(&mut rng));
                    if flavor == Flavor::Mixed {
                        let t = rng.gen_range(0..TRACE_FRAMES.len());
                        lines.extend(trace(&mut rng, t));
                    }
                    (format!("assert-{a}"), Some(ASSERTIONS[a].to_string()))
                }
                Flavor::TraceOnly => {
                    let t = rng.gen_range(0..TRACE_FRAMES.len());
                    lines.extend(header(&mut rng));
                    lines.extend(trace(&mut rng, t));
                    (format!("trace-{t}"), None)
                }
                Flavor::SignalOnly => {
                    let s = rng.gen_range(0..SIGNAL_TAILS.len());
                    if rng.gen_bool(0.5) {
                        lines.push(String::new());
                    }
                    for l in SIGNAL_TAILS[s] {
                        let pad = if rng.gen_bool(0.3) { "  " } else { "" };
                        lines.push(format!("{pad}{l}"));
                        if rng.gen_bool(0.2) {
                            lines.push(String::new());
                        }
                    }
                    (format!("signal-{s}"), None)
                }
            };
            Fixture { stderr: lines.join("\n") + "\n", class, flavor, assertion }
        })
        .collect()
}
