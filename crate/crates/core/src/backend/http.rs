use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{Backend, BackendError, ErrorBody, GenerationRequest, GenerationResponse, ScoreRequest, ScoreResponse};

/// Blocking client for a remote v1 backend.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    client: Client,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            base: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base, path);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| classify(&url, e))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| classify(&url, e))?;
        if status.is_success() {
            return serde_json::from_slice(&bytes)
                .map_err(|e| BackendError::Transport(format!("{url}: malformed response body: {e}")));
        }
        let body: ErrorBody = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorBody {
            error: String::new(),
            detail: String::from_utf8_lossy(&bytes).into_owned(),
        });
        Err(BackendError::from_body(status.as_u16(), body))
    }
}

fn classify(url: &str, e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(format!("{url}: {e}"))
    } else {
        BackendError::Transport(format!("{url}: {e}"))
    }
}

impl Backend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        req.validate()?;
        let resp: GenerationResponse = self.post("/v1/generate", req)?;
        Ok(resp.text)
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        req.validate()?;
        self.post("/v1/score", req)
    }
}
