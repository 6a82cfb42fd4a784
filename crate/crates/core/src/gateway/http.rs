//! Client for the sidecar wire protocol:
//!
//! - `GET  /v1/info`                → `{"model_id": str, "vocab_size": int}`
//! - `GET  /v1/vocab?prefix=<mark>` → `{"tokens": [{"id": int, "text": str}]}`
//! - `POST /v1/score`               → `{"logits": [num]}` for `{"prompt", "candidates"}`
//!
//! A 400 from `/v1/score` carries `{"error": str, "index": int}` naming the
//! offending candidate.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{LogitProvider, ProviderCapabilities, TokenEntry};
use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "LABELFORGE_ENDPOINT";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    /// Used when `/v1/info` does not advertise a limit.
    pub max_concurrency: usize,
    pub deterministic: bool,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout: DEFAULT_TIMEOUT,
            max_concurrency: 1,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InfoResponse {
    pub model_id: String,
    pub vocab_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_concurrency: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VocabResponse {
    pub tokens: Vec<TokenEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub prompt: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorResponse {
    pub error: String,
    #[serde(default)]
    pub index: Option<usize>,
}

pub struct HttpProvider {
    agent: Agent,
    base: String,
    info: InfoResponse,
    opts: HttpOptions,
}

fn transport(context: &str, e: impl std::fmt::Display) -> Error {
    Error::Transport(format!("{context}: {e}"))
}

impl HttpProvider {
    /// Connects to `base_url` and reads `/v1/info`.
    pub fn connect(base_url: &str, opts: HttpOptions) -> Result<Self> {
        if opts.max_concurrency < 1 {
            return Err(Error::InvalidArgument(
                "max_concurrency must be at least 1".into(),
            ));
        }
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base_url.trim_end_matches('/').to_string();
        let mut resp = agent
            .get(format!("{base}/v1/info"))
            .call()
            .map_err(|e| transport("GET /v1/info", e))?;
        if resp.status() != 200 {
            return Err(transport("GET /v1/info", format!("HTTP {}", resp.status())));
        }
        let info: InfoResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| transport("GET /v1/info: bad body", e))?;
        Ok(HttpProvider {
            agent,
            base,
            info,
            opts,
        })
    }

    /// Connects to the endpoint named by `LABELFORGE_ENDPOINT`.
    pub fn from_env(opts: HttpOptions) -> Result<Self> {
        let url = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::InvalidArgument(format!("{ENDPOINT_ENV} is not set")))?;
        Self::connect(&url, opts)
    }

    pub fn info(&self) -> &InfoResponse {
        &self.info
    }
}

impl LogitProvider for HttpProvider {
    fn capabilities(&self) -> ProviderCapabilities {
        ProviderCapabilities {
            model_id: self.info.model_id.clone(),
            max_concurrency: self
                .info
                .max_concurrency
                .unwrap_or(self.opts.max_concurrency)
                .max(1),
            deterministic: self.opts.deterministic,
        }
    }

    fn list_tokens(&self, prefix: &str) -> Result<Vec<TokenEntry>> {
        let mut resp = self
            .agent
            .get(format!("{}/v1/vocab", self.base))
            .query("prefix", prefix)
            .call()
            .map_err(|e| transport("GET /v1/vocab", e))?;
        if resp.status() != 200 {
            return Err(transport(
                "GET /v1/vocab",
                format!("HTTP {}", resp.status()),
            ));
        }
        let body: VocabResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| transport("GET /v1/vocab: bad body", e))?;
        Ok(body.tokens)
    }

    fn score(&self, prompt: &str, candidates: &[TokenEntry]) -> Result<Vec<f64>> {
        let req = ScoreRequest {
            prompt: prompt.to_string(),
            candidates: candidates.iter().map(|c| c.text.clone()).collect(),
        };
        let mut resp = self
            .agent
            .post(format!("{}/v1/score", self.base))
            .send_json(&req)
            .map_err(|e| transport("POST /v1/score", e))?;
        match resp.status().as_u16() {
            200 => {
                let body: ScoreResponse = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| transport("POST /v1/score: bad body", e))?;
                Ok(body.logits)
            }
            400 => {
                let body: ErrorResponse = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| transport("POST /v1/score: bad error body", e))?;
                match body.index {
                    Some(index) if index < candidates.len() => Err(Error::UnknownToken {
                        token: candidates[index].text.clone(),
                        index,
                        message: body.error,
                    }),
                    _ => Err(transport(
                        "POST /v1/score",
                        format!("HTTP 400: {}", body.error),
                    )),
                }
            }
            code => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(transport("POST /v1/score", format!("HTTP {code}: {text}")))
            }
        }
    }
}
