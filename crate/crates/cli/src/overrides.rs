// SPDX-License-Identifier: Apache-2.0

//! Campaign config assembly: file (or stdin) first, then `--key value`
//! overrides. Every config field is accepted in kebab and snake case.

use std::fs;
use std::io::Read;
use std::path::Path;

use anyhow::Context;
use clap::Args;
use selfuzz_core::campaign::{CampaignConfig, CampaignError};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Args, Debug, Default, Serialize)]
pub struct ConfigOverrides {
    /// Iterations to run (N_max).
    #[arg(long, alias = "max_iterations")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u32>,
    /// Training epochs per iteration.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    /// Seeds drawn from the corpus per iteration.
    #[arg(long, alias = "max_seed_samples")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_seed_samples: Option<usize>,
    /// Maximum tokens per generated program, prefix included.
    #[arg(long, alias = "token_limit")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_limit: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Seed tokens kept as the generation prefix.
    #[arg(long, alias = "prefix_len")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix_len: Option<usize>,
    #[arg(long, alias = "candidates_per_seed")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates_per_seed: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long, alias = "wall_clock_budget")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_budget: Option<f64>,
    /// Concurrent compiler runs.
    #[arg(long, visible_alias = "workers", alias = "worker_pool_width")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worker_pool_width: Option<usize>,
    #[arg(long, alias = "rng_seed")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    #[arg(long, value_parser = ["Perturbed", "GreedyAblation", "NoAugmentationAblation"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Per-run compiler timeout in seconds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
    /// Stack frame prefix used for trace keys; repeatable.
    #[arg(long = "frame-prefix", alias = "frame_prefixes")]
    #[serde(rename = "frame_prefixes", skip_serializing_if = "Vec::is_empty")]
    pub frame_prefixes: Vec<String>,
    /// Programs per sweep batch.
    #[arg(long, alias = "sweep_batch")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_batch: Option<usize>,
}

fn read_source(path: &Path) -> anyhow::Result<String> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).context("reading config from stdin")?;
        Ok(text)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
    }
}

/// The config file (or defaults), with `overrides` applied and the mode's
/// forced settings in place.
pub fn load_config(path: Option<&Path>, overrides: &ConfigOverrides) -> anyhow::Result<CampaignConfig> {
    let mut fields = match path {
        Some(p) => match serde_json::from_str::<Value>(&read_source(p)?) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(CampaignError::ConfigInvalid("config must be a JSON object".into()).into()),
            Err(e) => return Err(CampaignError::ConfigInvalid(e.to_string()).into()),
        },
        None => Map::new(),
    };
    if let Value::Object(o) = serde_json::to_value(overrides).expect("overrides serialize") {
        fields.extend(o);
    }
    Ok(CampaignConfig::from_json(&Value::Object(fields).to_string())?.normalized()?)
}
