// SPDX-License-Identifier: Apache-2.0

//! Client for generator backends served over HTTP.
//!
//! Wire protocol (JSON bodies):
//!
//! * `POST /generate` `{prefix_tokens, max_new_tokens, temperature, num_samples, rng_seed}`
//!   → `{samples: [[token]]}`, each sample excluding the prefix
//! * `POST /train` `{programs: [text], epochs}` → `{status: "ok", heldout_nll}`
//! * `GET /health` → `{supports_training, max_context}`

use std::sync::Arc;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    apply_stop_rule, Capabilities, GenerateRequest, GeneratorBackend, GeneratorError, StopRule, TokenDistribution,
    TrainOutcome,
};
use crate::corpus::{TestProgram, Token};

#[derive(Serialize, Deserialize)]
pub struct TrainRequest {
    pub programs: Vec<String>,
    pub epochs: u32,
}

#[derive(Serialize, Deserialize)]
pub struct TrainResponse {
    pub status: String,
    pub heldout_nll: f64,
}

#[derive(Serialize, Deserialize)]
pub struct GenerateResponse {
    pub samples: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct Remote {
    remote: String,
}

#[derive(Clone)]
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
    caps: Capabilities,
}

fn map_err(base: &str, e: ureq::Error) -> GeneratorError {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            GeneratorError::Protocol(format!("{base} answered {code}: {body}"))
        }
        ureq::Error::Transport(t) => GeneratorError::BackendUnavailable(format!("{base}: {t}")),
    }
}

impl HttpBackend {
    /// Connects and reads `/health`; an unreachable server is
    /// [`GeneratorError::BackendUnavailable`].
    pub fn connect(url: &str) -> Result<Self, GeneratorError> {
        let base = url.trim_end_matches('/').to_string();
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout_read(Duration::from_secs(3600))
            .build();
        let caps: Capabilities = agent
            .get(&format!("{base}/health"))
            .call()
            .map_err(|e| map_err(&base, e))?
            .into_json()
            .map_err(|e| GeneratorError::Protocol(format!("bad /health body: {e}")))?;
        Ok(HttpBackend { base, agent, caps })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, GeneratorError> {
        self.agent
            .post(&format!("{}{path}", self.base))
            .send_json(body)
            .map_err(|e| map_err(&self.base, e))?
            .into_json()
            .map_err(|e| GeneratorError::Protocol(format!("bad {path} body: {e}")))
    }
}

impl GeneratorBackend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn train(&self, programs: &[Arc<TestProgram>], epochs: u32, _rng_seed: u64) -> Result<TrainOutcome, GeneratorError> {
        if programs.is_empty() {
            return Err(GeneratorError::EmptyTrainingSet);
        }
        if !self.caps.supports_training {
            return Err(GeneratorError::Unsupported { backend: self.base.clone(), op: "train" });
        }
        let req = TrainRequest { programs: programs.iter().map(|p| p.text().to_string()).collect(), epochs };
        let resp: TrainResponse = self.post("/train", &req)?;
        if resp.status != "ok" {
            return Err(GeneratorError::Protocol(format!("/train status {:?}", resp.status)));
        }
        Ok(TrainOutcome { backend: Arc::new(self.clone()), heldout_nll: resp.heldout_nll })
    }

    fn next_token_distribution(&self, _prefix: &[Token]) -> Result<TokenDistribution, GeneratorError> {
        Err(GeneratorError::Unsupported { backend: self.base.clone(), op: "next_token_distribution" })
    }

    fn sample_next(&self, prefix: &[Token], temperature: f64, _rng: &mut ChaCha8Rng) -> Result<Token, GeneratorError> {
        let req = GenerateRequest {
            prefix_tokens: prefix.to_vec(),
            max_new_tokens: 1,
            temperature,
            num_samples: 1,
            rng_seed: 0,
        };
        self.generate(&req, StopRule::Budget)?
            .pop()
            .and_then(|mut s| s.pop())
            .ok_or_else(|| GeneratorError::Protocol("empty sample".into()))
    }

    fn generate(&self, req: &GenerateRequest, stop: StopRule) -> Result<Vec<Vec<Token>>, GeneratorError> {
        let resp: GenerateResponse = self.post("/generate", req)?;
        if resp.samples.len() != req.num_samples {
            return Err(GeneratorError::Protocol(format!(
                "asked for {} samples, got {}",
                req.num_samples,
                resp.samples.len()
            )));
        }
        Ok(resp
            .samples
            .into_iter()
            .map(|s| {
                let toks: Vec<Token> = s.into_iter().filter(|t| !t.is_empty()).map(Token::new).collect();
                let mut cut = apply_stop_rule(&req.prefix_tokens, &toks, stop);
                cut.truncate(req.max_new_tokens);
                cut
            })
            .collect())
    }

    fn snapshot(&self) -> Result<Vec<u8>, GeneratorError> {
        serde_json::to_vec(&Remote { remote: self.base.clone() }).map_err(|e| GeneratorError::Snapshot(e.to_string()))
    }

    fn restore(&self, snapshot: &[u8]) -> Result<Arc<dyn GeneratorBackend>, GeneratorError> {
        let r: Remote = serde_json::from_slice(snapshot).map_err(|e| GeneratorError::Snapshot(e.to_string()))?;
        Ok(Arc::new(HttpBackend::connect(&r.remote)?))
    }
}
