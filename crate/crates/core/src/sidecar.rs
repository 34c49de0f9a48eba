//! Blocking HTTP client for the model-serving sidecar.
//!
//! Endpoints: `POST /embed` (pair embeddings), `POST /rewrite`
//! (conversational rewrites) and `GET /health`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingKey, EmbeddingProvider, EmbeddingVector};
use crate::rewrite::{RewriteRequest, RewriteResponse, Rewriter};
use crate::{Error, Result};

/// Environment variable holding the sidecar base URL.
pub const SIDECAR_URL_ENV: &str = "CONVSEARCH_SIDECAR_URL";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub pairs: Vec<EmbeddingKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub embedding_dim: usize,
    #[serde(default)]
    pub models: serde_json::Value,
}

#[derive(Clone, Debug, Deserialize)]
struct ErrorBody {
    #[serde(default)]
    detail: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct SidecarClient {
    base: String,
    http: reqwest::blocking::Client,
    max_batch: usize,
    dim: usize,
}

impl SidecarClient {
    /// Connects and learns the embedding width from `/health`.
    pub fn connect(base_url: &str) -> Result<Self> {
        Self::connect_with(base_url, Duration::from_secs(120), 32)
    }

    pub fn connect_with(base_url: &str, timeout: Duration, max_batch: usize) -> Result<Self> {
        if max_batch == 0 {
            return Err(Error::Config("sidecar batch size must be >= 1".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let mut client = SidecarClient {
            base: base_url.trim_end_matches('/').to_string(),
            http,
            max_batch,
            dim: 0,
        };
        let health = client.health()?;
        if health.status != "ok" {
            return Err(Error::Transport(format!(
                "sidecar reports status `{}`",
                health.status
            )));
        }
        client.dim = health.embedding_dim;
        Ok(client)
    }

    /// Uses the URL in `CONVSEARCH_SIDECAR_URL`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var(SIDECAR_URL_ENV)
            .map_err(|_| Error::Config(format!("{SIDECAR_URL_ENV} is not set")))?;
        Self::connect(&url)
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn check(resp: reqwest::blocking::Response, what: &str) -> Result<reqwest::blocking::Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let detail = resp
            .json::<ErrorBody>()
            .map(|b| b.detail.to_string())
            .unwrap_or_default();
        Err(Error::Transport(format!(
            "{what}: HTTP {} {detail}",
            status.as_u16()
        )))
    }

    fn transport(what: &str) -> impl Fn(reqwest::Error) -> Error + '_ {
        move |e| Error::Transport(format!("{what}: {e}"))
    }

    pub fn health(&self) -> Result<Health> {
        let what = "GET /health";
        let resp = self
            .http
            .get(format!("{}/health", self.base))
            .send()
            .map_err(Self::transport(what))?;
        Self::check(resp, what)?
            .json()
            .map_err(Self::transport(what))
    }

    /// Embeds pairs in chunks of at most `max_batch`.
    pub fn embed(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>> {
        let what = "POST /embed";
        let mut out = Vec::with_capacity(keys.len());
        for chunk in keys.chunks(self.max_batch) {
            let body = EmbedRequest {
                pairs: chunk.to_vec(),
            };
            let resp = self
                .http
                .post(format!("{}/embed", self.base))
                .json(&body)
                .send()
                .map_err(Self::transport(what))?;
            let parsed: EmbedResponse = Self::check(resp, what)?
                .json()
                .map_err(Self::transport(what))?;
            if parsed.embeddings.len() != chunk.len() {
                return Err(Error::Transport(format!(
                    "{what}: {} vectors for {} pairs",
                    parsed.embeddings.len(),
                    chunk.len()
                )));
            }
            for v in parsed.embeddings {
                if v.len() != parsed.dim {
                    return Err(Error::DimensionMismatch {
                        expected: parsed.dim,
                        actual: v.len(),
                    });
                }
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }

    pub fn rewrite_request(&self, request: &RewriteRequest) -> Result<String> {
        let what = "POST /rewrite";
        let resp = self
            .http
            .post(format!("{}/rewrite", self.base))
            .json(request)
            .send()
            .map_err(Self::transport(what))?;
        let parsed: RewriteResponse = Self::check(resp, what)?
            .json()
            .map_err(Self::transport(what))?;
        Ok(parsed.rewritten)
    }
}

impl EmbeddingProvider for SidecarClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, keys: &[EmbeddingKey]) -> Result<Vec<EmbeddingVector>> {
        self.embed(keys)
    }
}

impl Rewriter for SidecarClient {
    fn rewrite(&self, request: &RewriteRequest) -> Result<String> {
        self.rewrite_request(request)
    }
}
