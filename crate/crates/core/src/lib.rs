// SPDX-License-Identifier: Apache-2.0

//! Self-adaptive fuzzing for MLIR-style compilers.
//!
//! The loop alternates four phases: train a next-token model on the current
//! corpus, continue short prefixes of sampled corpus programs with it,
//! compile every candidate under each pass of a pass list while bucketing
//! crashes, then fold valid candidates and pass outputs back into the corpus.
//!
//! * [`corpus`] tokenizes and stores programs.
//! * [`generator`] holds the trainable models and decoding strategies.
//! * [`harness`] runs programs through a compiler and classifies the result.
//! * [`triage`] turns crashes into deduplicated bugs.
//! * [`campaign`] drives the loop with checkpointing.
//! * [`metrics`] computes reporting figures over finished campaigns.

pub mod campaign;
pub mod corpus;
pub mod generator;
pub mod harness;
pub mod metrics;
pub mod seeding;
pub mod triage;
