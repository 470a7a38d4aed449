//! HTTP JSON clients for the inference services the pipeline can delegate to:
//! embedding, pair scoring, category scoring, and text generation.
//!
//! All endpoints speak UTF-8 JSON over POST. Any non-200 response surfaces as
//! an error carrying the echoed body, so server-side diagnostics are never
//! swallowed. Requests time out after 30 seconds.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{CategoryScores, CategoryScorer, ClassifyError, ScoreProvenance};
use crate::embedding::{EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::rerank::{PairScorer, RerankError};

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{endpoint} returned {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("{endpoint}: {reason}")]
    BadResponse { endpoint: String, reason: String },
}

#[derive(Debug, Clone)]
struct HttpJson {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpJson {
    fn new(base_url: &str) -> Result<HttpJson, RemoteError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()?;
        Ok(HttpJson {
            base: base_url.trim_end_matches('/').to_owned(),
            client,
        })
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        endpoint: &str,
        request: &Req,
    ) -> Result<Resp, RemoteError> {
        let response = self
            .client
            .post(format!("{}{endpoint}", self.base))
            .json(request)
            .send()?;
        let status = response.status();
        if !status.is_success() {
            return Err(RemoteError::Status {
                endpoint: endpoint.to_owned(),
                status: status.as_u16(),
                body: response.text().unwrap_or_default(),
            });
        }
        response.json().map_err(|e| RemoteError::BadResponse {
            endpoint: endpoint.to_owned(),
            reason: e.to_string(),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dimension: usize,
    vectors: Vec<Vec<f64>>,
}

/// Embedding service client. Connecting probes the service once to learn the
/// vector dimension, which stays fixed for the client's lifetime.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    http: HttpJson,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn connect(base_url: &str) -> Result<RemoteEmbedder, RemoteError> {
        let http = HttpJson::new(base_url)?;
        let probe: EmbedResponse = http.post("/embed", &EmbedRequest { texts: &["probe"] })?;
        if probe.vectors.len() != 1 || probe.vectors[0].len() != probe.dimension {
            return Err(RemoteError::BadResponse {
                endpoint: "/embed".to_owned(),
                reason: "probe response shape does not match declared dimension".to_owned(),
            });
        }
        Ok(RemoteEmbedder {
            http,
            dimension: probe.dimension,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> String {
        format!("remote:{}", self.http.base)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let response: EmbedResponse = self
            .http
            .post("/embed", &EmbedRequest { texts })
            .map_err(|e| EmbeddingError::RemoteUnavailable(e.to_string()))?;
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::RemoteUnavailable(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                response.vectors.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.dimension,
                        got: v.len(),
                    });
                }
                Ok(EmbeddingVector(v))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: &'a str,
    candidates: &'a [&'a str],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Cross-encoder scoring client. The caller validates count and range, so the
/// client is a plain transport.
#[derive(Debug, Clone)]
pub struct RemoteCrossEncoder {
    http: HttpJson,
}

impl RemoteCrossEncoder {
    pub fn new(base_url: &str) -> Result<RemoteCrossEncoder, RemoteError> {
        Ok(RemoteCrossEncoder {
            http: HttpJson::new(base_url)?,
        })
    }
}

impl PairScorer for RemoteCrossEncoder {
    fn scorer_id(&self) -> String {
        format!("remote:{}", self.http.base)
    }

    fn score_texts(&self, query: &str, candidates: &[&str]) -> Result<Vec<f64>, RerankError> {
        let response: ScoreResponse = self
            .http
            .post("/score", &ScoreRequest { query, candidates })
            .map_err(|e| RerankError::RemoteUnavailable(e.to_string()))?;
        Ok(response.scores)
    }
}

#[derive(Serialize)]
struct CategoriesRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct CategoriesResponse {
    logits: Vec<f64>,
}

/// Facet category scoring client; expects exactly 28 logits per call.
#[derive(Debug, Clone)]
pub struct RemoteCategoryScorer {
    http: HttpJson,
}

impl RemoteCategoryScorer {
    pub fn new(base_url: &str) -> Result<RemoteCategoryScorer, RemoteError> {
        Ok(RemoteCategoryScorer {
            http: HttpJson::new(base_url)?,
        })
    }
}

impl CategoryScorer for RemoteCategoryScorer {
    fn scorer_id(&self) -> String {
        format!("remote:{}", self.http.base)
    }

    fn score_text(&self, text: &str) -> Result<CategoryScores, ClassifyError> {
        let response: CategoriesResponse = self
            .http
            .post("/categories", &CategoriesRequest { text })
            .map_err(|e| ClassifyError::RemoteUnavailable(e.to_string()))?;
        CategoryScores::new(response.logits, ScoreProvenance::Remote)
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    system: &'a str,
    user: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// LLM generation client for the prompt-based task backends.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    http: HttpJson,
}

impl RemoteGenerator {
    pub fn new(base_url: &str) -> Result<RemoteGenerator, RemoteError> {
        Ok(RemoteGenerator {
            http: HttpJson::new(base_url)?,
        })
    }

    pub fn generate(&self, system: &str, user: &str) -> Result<String, RemoteError> {
        let response: GenerateResponse = self.http.post("/generate", &GenerateRequest { system, user })?;
        Ok(response.text)
    }

    pub fn endpoint(&self) -> &str {
        &self.http.base
    }
}
