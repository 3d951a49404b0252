// SPDX-License-Identifier: Apache-2.0

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::generator::GenerationConfig;
use crate::triage::DEFAULT_FRAME_PREFIXES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Temperature sampling from short prefixes, corpus grows every iteration.
    Perturbed,
    /// Argmax decoding from 10-token prefixes, one candidate per seed.
    GreedyAblation,
    /// Model trained once on the seeds; nothing is ever added back.
    NoAugmentationAblation,
}

pub const GREEDY_PREFIX_LEN: usize = 10;

/// Campaign parameters. The JSON form uses these field names; durations are
/// seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub max_iterations: u32,
    pub epochs: u32,
    pub max_seed_samples: usize,
    pub token_limit: usize,
    pub temperature: f64,
    pub prefix_len: usize,
    pub candidates_per_seed: usize,
    pub wall_clock_budget: Option<f64>,
    pub worker_pool_width: usize,
    pub rng_seed: u64,
    pub mode: Mode,
    /// Per-run compiler timeout.
    pub timeout: f64,
    pub frame_prefixes: Vec<String>,
    /// Programs per sweep batch; the wall-clock budget is checked between
    /// batches.
    pub sweep_batch: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            max_iterations: 30,
            epochs: 5,
            max_seed_samples: 35_000,
            token_limit: 600,
            temperature: 1.0,
            prefix_len: 3,
            candidates_per_seed: 4,
            wall_clock_budget: None,
            worker_pool_width: 4,
            rng_seed: 0,
            mode: Mode::Perturbed,
            timeout: 10.0,
            frame_prefixes: DEFAULT_FRAME_PREFIXES.iter().map(|s| s.to_string()).collect(),
            sweep_batch: 64,
        }
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        serde_json::from_str(text).map_err(|e| CampaignError::ConfigInvalid(e.to_string()))
    }

    /// Applies the mode's forced settings, then checks every field.
    pub fn normalized(mut self) -> Result<Self, CampaignError> {
        if self.mode == Mode::GreedyAblation {
            self.prefix_len = GREEDY_PREFIX_LEN;
            self.candidates_per_seed = 1;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::ConfigInvalid(m.to_string()));
        let counts = [
            ("max_iterations", self.max_iterations as usize),
            ("epochs", self.epochs as usize),
            ("max_seed_samples", self.max_seed_samples),
            ("token_limit", self.token_limit),
            ("prefix_len", self.prefix_len),
            ("candidates_per_seed", self.candidates_per_seed),
            ("worker_pool_width", self.worker_pool_width),
            ("sweep_batch", self.sweep_batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CampaignError::ConfigInvalid(format!("{name} must be at least 1")));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be a positive number");
        }
        if self.prefix_len > self.token_limit {
            return bad("prefix_len exceeds token_limit");
        }
        if self.wall_clock_budget.is_some_and(|b| !(b.is_finite() && b >= 0.0)) {
            return bad("wall_clock_budget must be a non-negative number of seconds");
        }
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return bad("timeout must be a positive number of seconds");
        }
        if self.mode == Mode::GreedyAblation && (self.prefix_len != GREEDY_PREFIX_LEN || self.candidates_per_seed != 1) {
            return bad("GreedyAblation requires prefix_len 10 and candidates_per_seed 1");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }

    pub fn budget(&self) -> Option<Duration> {
        self.wall_clock_budget.map(Duration::from_secs_f64)
    }

    pub fn generation(&self, rng_seed: u64) -> GenerationConfig {
        GenerationConfig {
            temperature: self.temperature,
            prefix_len: self.prefix_len,
            candidates_per_seed: self.candidates_per_seed,
            token_limit: self.token_limit,
            rng_seed,
        }
    }

    pub fn decoder_name(&self) -> &'static str {
        match self.mode {
            Mode::GreedyAblation => "greedy",
            Mode::Perturbed | Mode::NoAugmentationAblation => "perturbed",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_json_names() {
        let c = CampaignConfig::from_json(r#"{"max_iterations": 2, "mode": "GreedyAblation", "wall_clock_budget": 60}"#).unwrap();
        assert_eq!((c.epochs, c.token_limit, c.max_seed_samples, c.prefix_len, c.candidates_per_seed), (5, 600, 35_000, 3, 4));
        assert!(c.validate().is_err());
        let c = c.normalized().unwrap();
        assert_eq!((c.prefix_len, c.candidates_per_seed), (10, 1));
        assert_eq!(c.budget(), Some(Duration::from_secs(60)));
        assert!(CampaignConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(CampaignConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(CampaignConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
    }
}
