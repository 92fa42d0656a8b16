//! Audit configuration, read from TOML.
//!
//! ```toml
//! forget_set = "forget_set.json"
//! out = "results.jsonl"
//! arms = ["auto", "bio", "meta", "empty"]
//! conventions = ["empty-think", "full-think"]
//! probe_kinds = ["canary", "qa", "retain"]
//! tf = true
//!
//! [[adapters]]
//! label = "npo_K1600_seed0"
//! uri = "sim:npo_k1600"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{default_timeout, DEFAULT_IN_FLIGHT, DEFAULT_MAX_NEW_TOKENS};
use crate::error::{AuditError, Result};
use crate::probe_builder::{ChatTemplate, PrefillArm, PrefillTemplates, ProbeKind};
use crate::trace_parser::{ParserConvention, TagPair};

pub use crate::stats::BootstrapParams;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    /// Free-form label; K and seed metadata live here, e.g. `npo_K1600_seed0`.
    pub label: String,
    pub uri: String,
}

/// Chat wrapping, thinking prefills and tag literals.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSet {
    pub chat: ChatTemplate,
    pub prefill: PrefillTemplates,
    pub tags: TagPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub adapters: Vec<AdapterSpec>,
    #[serde(rename = "forget_set")]
    pub forget_set_path: PathBuf,
    #[serde(default = "default_arms")]
    pub arms: Vec<PrefillArm>,
    #[serde(default = "default_conventions")]
    pub conventions: Vec<ParserConvention>,
    #[serde(default = "default_kinds")]
    pub probe_kinds: Vec<ProbeKind>,
    #[serde(rename = "tf", default)]
    pub tf_enabled: bool,
    #[serde(default)]
    pub bootstrap: BootstrapParams,
    #[serde(default = "default_in_flight")]
    pub concurrency_limit: usize,
    #[serde(rename = "out")]
    pub out_path: PathBuf,
    /// Keep raw generations in the records. Off by default: they carry the
    /// canary text.
    #[serde(default)]
    pub store_raw: bool,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    /// Per-request timeout; falls back to the environment default.
    #[serde(default)]
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub templates: TemplateSet,
}

fn default_arms() -> Vec<PrefillArm> {
    PrefillArm::ALL.to_vec()
}

fn default_conventions() -> Vec<ParserConvention> {
    vec![ParserConvention::EmptyThink]
}

fn default_kinds() -> Vec<ProbeKind> {
    vec![ProbeKind::Canary, ProbeKind::Retain]
}

fn default_in_flight() -> usize {
    DEFAULT_IN_FLIGHT
}

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

impl AuditConfig {
    /// A config with defaults for everything but the adapters and paths.
    pub fn new(adapters: Vec<AdapterSpec>, forget_set_path: impl Into<PathBuf>, out_path: impl Into<PathBuf>) -> Self {
        AuditConfig {
            adapters,
            forget_set_path: forget_set_path.into(),
            arms: default_arms(),
            conventions: default_conventions(),
            probe_kinds: default_kinds(),
            tf_enabled: false,
            bootstrap: BootstrapParams::default(),
            concurrency_limit: DEFAULT_IN_FLIGHT,
            out_path: out_path.into(),
            store_raw: false,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            timeout_secs: None,
            templates: TemplateSet::default(),
        }
    }

    pub fn from_toml(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| AuditError::Format {
            record: "audit config".into(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
        let mut cfg = Self::from_toml(&raw).map_err(|e| match e {
            AuditError::Format { detail, .. } => AuditError::Format {
                record: path.display().to_string(),
                detail,
            },
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            cfg.forget_set_path = resolve(dir, &cfg.forget_set_path);
            cfg.out_path = resolve(dir, &cfg.out_path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.adapters.is_empty() {
            return Err(AuditError::invalid("config lists no adapters"));
        }
        let mut labels = HashSet::new();
        for a in &self.adapters {
            if a.label.trim().is_empty() {
                return Err(AuditError::invalid(format!(
                    "adapter with uri `{}` has an empty label",
                    a.uri
                )));
            }
            if !labels.insert(a.label.as_str()) {
                return Err(AuditError::invalid(format!("duplicate adapter label `{}`", a.label)));
            }
        }
        if self.arms.is_empty() {
            return Err(AuditError::invalid("config lists no arms"));
        }
        if self.conventions.is_empty() {
            return Err(AuditError::invalid("config lists no parser conventions"));
        }
        if self.probe_kinds.is_empty() {
            return Err(AuditError::invalid("config lists no probe kinds"));
        }
        if self.concurrency_limit == 0 {
            return Err(AuditError::invalid("concurrency_limit must be at least 1"));
        }
        if self.max_new_tokens == 0 {
            return Err(AuditError::invalid("max_new_tokens must be at least 1"));
        }
        if let Some(t) = self.timeout_secs {
            if !(t.is_finite() && t > 0.0) {
                return Err(AuditError::invalid(format!("timeout_secs {t} must be positive")));
            }
        }
        self.bootstrap.validate()?;
        self.templates.chat.validate()
    }

    pub fn timeout(&self) -> Duration {
        self.timeout_secs
            .map(Duration::from_secs_f64)
            .unwrap_or_else(default_timeout)
    }

    /// Arms with duplicates removed, in canonical order.
    pub fn arm_set(&self) -> Vec<PrefillArm> {
        PrefillArm::ALL.into_iter().filter(|a| self.arms.contains(a)).collect()
    }

    pub fn convention_set(&self) -> Vec<ParserConvention> {
        ParserConvention::ALL
            .into_iter()
            .filter(|c| self.conventions.contains(c))
            .collect()
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}
