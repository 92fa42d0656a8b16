//! Model backend contract and the v1 wire protocol.
//!
//! A backend is addressed by URI: `sim:<preset>` for the in-process
//! simulator, `http://` or `https://` for a remote server speaking
//! `POST /v1/generate` and `POST /v1/score`.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forget_set::ForgetSet;

pub mod conformance;
pub mod http;
pub mod server;

pub use http::HttpBackend;
pub use server::{serve, ServerHandle};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 256;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_IN_FLIGHT: usize = 4;
/// Environment variable overriding the default per-request timeout, in seconds.
pub const TIMEOUT_ENV: &str = "THINKAUDIT_TIMEOUT_SECS";

/// Error codes carried in the `error` field of a 4xx response body.
pub mod codes {
    pub const ALIGNMENT: &str = "alignment";
    pub const INVALID_ARGUMENT: &str = "invalid-argument";
    pub const UNSUPPORTED: &str = "unsupported";
    pub const INTERNAL: &str = "internal";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    #[serde(rename = "prompt")]
    pub prompt_text: String,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_greedy")]
    pub greedy: bool,
}

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

fn default_greedy() -> bool {
    true
}

impl GenerationRequest {
    pub fn greedy(prompt_text: impl Into<String>) -> Self {
        GenerationRequest {
            prompt_text: prompt_text.into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            greedy: true,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(rename = "context")]
    pub context_text: String,
    #[serde(rename = "continuation")]
    pub continuation_text: String,
}

impl ScoreRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.continuation_text.is_empty() {
            return Err(BackendError::InvalidRequest("continuation must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    #[serde(rename = "token")]
    pub token_text: String,
    /// Conditional log-probability of the gold token, in nats.
    #[serde(rename = "logprob")]
    pub gold_logprob: f64,
    #[serde(rename = "top1")]
    pub is_top1: bool,
    /// The argmax was shared with at least one other token.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<TokenScore>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("continuation does not align with the context tokenization: {0}")]
    Alignment(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unsupported by backend: {0}")]
    Unsupported(String),
    #[error("remote error `{code}`: {detail}")]
    Remote { code: String, detail: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unknown backend uri `{0}`")]
    UnknownUri(String),
}

impl BackendError {
    pub fn code(&self) -> &str {
        match self {
            BackendError::Alignment(_) => codes::ALIGNMENT,
            BackendError::InvalidRequest(_) => codes::INVALID_ARGUMENT,
            BackendError::Unsupported(_) => codes::UNSUPPORTED,
            BackendError::Remote { code, .. } => code,
            _ => codes::INTERNAL,
        }
    }

    pub fn from_body(status: u16, body: ErrorBody) -> Self {
        match body.error.as_str() {
            codes::ALIGNMENT => BackendError::Alignment(body.detail),
            codes::INVALID_ARGUMENT => BackendError::InvalidRequest(body.detail),
            codes::UNSUPPORTED => BackendError::Unsupported(body.detail),
            _ => BackendError::Remote {
                code: if body.error.is_empty() {
                    format!("http-{status}")
                } else {
                    body.error
                },
                detail: body.detail,
            },
        }
    }
}

/// Generation and teacher-forced scoring against one model.
pub trait Backend: Send + Sync {
    /// Greedy continuation of `req.prompt_text`, excluding the prompt.
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError>;

    /// Per-token gold log-probabilities of the continuation given the context.
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        (**self).generate(req)
    }

    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        (**self).score(req)
    }
}

#[derive(Debug, Clone)]
pub struct BackendOptions {
    pub timeout: Duration,
}

impl Default for BackendOptions {
    fn default() -> Self {
        BackendOptions {
            timeout: default_timeout(),
        }
    }
}

/// The default timeout, honoring [`TIMEOUT_ENV`] when it parses.
pub fn default_timeout() -> Duration {
    std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|s| *s > 0.0)
        .map(Duration::from_secs_f64)
        .unwrap_or(DEFAULT_TIMEOUT)
}

/// Opens the backend named by `uri`. Simulator backends need the forget set
/// they simulate.
pub fn open_backend(
    uri: &str,
    forget_set: &ForgetSet,
    opts: &BackendOptions,
) -> Result<Arc<dyn Backend>, BackendError> {
    if let Some(preset) = uri.strip_prefix("sim:") {
        let config = crate::sim_model::configure_preset(preset, forget_set)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        return Ok(Arc::new(crate::sim_model::SimBackend::new(config, forget_set.clone())));
    }
    if uri.starts_with("http://") || uri.starts_with("https://") {
        return Ok(Arc::new(HttpBackend::new(uri, opts.timeout)?));
    }
    Err(BackendError::UnknownUri(uri.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_field_names() {
        let req = GenerationRequest::greedy("p");
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"prompt": "p", "max_new_tokens": 256, "greedy": true})
        );
        let defaults: GenerationRequest = serde_json::from_str(r#"{"prompt":"q"}"#).unwrap();
        assert_eq!(defaults.max_new_tokens, 256);
        assert!(defaults.greedy);

        let s = ScoreResponse {
            tokens: vec![TokenScore {
                token_text: " a".into(),
                gold_logprob: -0.5,
                is_top1: true,
                tie: false,
            }],
        };
        assert_eq!(
            serde_json::to_value(&s).unwrap(),
            serde_json::json!({"tokens": [{"token": " a", "logprob": -0.5, "top1": true}]})
        );
        let sr = ScoreRequest {
            context_text: "c".into(),
            continuation_text: " d".into(),
        };
        assert_eq!(
            serde_json::to_value(&sr).unwrap(),
            serde_json::json!({"context": "c", "continuation": " d"})
        );
    }

    #[test]
    fn error_codes_roundtrip() {
        for err in [
            BackendError::Alignment("x".into()),
            BackendError::InvalidRequest("y".into()),
            BackendError::Unsupported("z".into()),
        ] {
            let body = ErrorBody {
                error: err.code().to_string(),
                detail: match &err {
                    BackendError::Alignment(d) | BackendError::InvalidRequest(d) | BackendError::Unsupported(d) => {
                        d.clone()
                    }
                    _ => unreachable!(),
                },
            };
            assert_eq!(BackendError::from_body(400, body), err);
        }
    }

    #[test]
    fn unknown_scheme() {
        let set = crate::forget_set::generate_forget_set(0, 2).unwrap();
        assert!(matches!(
            open_backend("ftp://x", &set, &BackendOptions::default()),
            Err(BackendError::UnknownUri(_))
        ));
        assert!(open_backend("sim:nope", &set, &BackendOptions::default()).is_err());
    }
}
