//! Teacher-forced canary continuation scoring.
//!
//! The context is the chat-wrapped canary prompt, a closed think block with
//! a fixed prefill, and the canary head; the gold continuation is scored
//! token by token. Nothing here consults the trace parser.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ScoreRequest, TokenScore};
use crate::config::TemplateSet;
use crate::error::{AuditError, Result};
use crate::forget_set::AuthorRecord;
use crate::probe_builder::{assemble_prefill_prefix_with, build_canary_prompt, PrefillArm, TemplateKind};
use crate::stats::{cluster_bootstrap_ci, BootstrapParams, ClusteredSample, ConfidenceInterval};

/// Builds the scoring request for `author` under a prefill arm. The
/// continuation carries a leading space so that it extends the context at a
/// word boundary.
pub fn build_tf_context(author: &AuthorRecord, arm: PrefillArm, templates: &TemplateSet) -> Result<ScoreRequest> {
    let Some(mode) = arm.template_mode() else {
        return Err(AuditError::invalid(
            "teacher forcing needs a fixed thinking prefill; the auto arm has none",
        ));
    };
    let probe = build_canary_prompt(author)?;
    let prefill = templates.prefill.render(mode, &author.name, TemplateKind::Canary);
    let chat = templates.chat.render(&probe.prompt);
    let context = format!(
        "{}{}",
        assemble_prefill_prefix_with(&chat, &prefill, &templates.tags),
        probe.head
    );
    Ok(ScoreRequest {
        context_text: context,
        continuation_text: format!(" {}", probe.continuation),
    })
}

/// One author's teacher-forced scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorTF {
    pub n_tokens: usize,
    pub mean_logp_per_token: f64,
    pub top1_rate: f64,
    /// Tokens whose argmax was shared with the gold token.
    pub ties: usize,
}

impl AuthorTF {
    /// `None` for an empty token list. A tie that includes the gold token
    /// counts as a match.
    pub fn from_tokens(tokens: &[TokenScore]) -> Option<AuthorTF> {
        if tokens.is_empty() {
            return None;
        }
        let n = tokens.len() as f64;
        let logp: f64 = tokens.iter().map(|t| t.gold_logprob).sum();
        let matches = tokens.iter().filter(|t| t.is_top1 || t.tie).count();
        Some(AuthorTF {
            n_tokens: tokens.len(),
            mean_logp_per_token: logp / n,
            top1_rate: matches as f64 / n,
            ties: tokens.iter().filter(|t| t.tie).count(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TFResult {
    pub adapter_id: String,
    pub arm: PrefillArm,
    pub per_author: BTreeMap<String, AuthorTF>,
    pub mean_logp: f64,
    pub ppl: f64,
    pub top1: f64,
    /// Interval on the mean log-probability per token.
    pub ci: ConfidenceInterval,
    pub top1_ci: ConfidenceInterval,
    /// Authors dropped for alignment errors or empty continuations.
    pub excluded: usize,
    pub ties: usize,
}

fn interval(values: Vec<(String, f64)>, params: &BootstrapParams) -> Result<ConfidenceInterval> {
    let sample = ClusteredSample::new(values)?;
    if sample.clusters.len() >= 2 {
        return cluster_bootstrap_ci(&sample, params);
    }
    let m = sample.mean();
    Ok(ConfidenceInterval {
        lo: m,
        hi: m,
        level: params.level,
        n_boot: params.n_boot,
        seed: params.seed,
    })
}

/// Averages per author first, then across authors.
pub fn aggregate_tf(
    adapter_id: &str,
    arm: PrefillArm,
    per_author: BTreeMap<String, Option<AuthorTF>>,
    params: &BootstrapParams,
) -> Result<TFResult> {
    let total = per_author.len();
    let kept: BTreeMap<String, AuthorTF> = per_author.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    if kept.is_empty() {
        return Err(AuditError::invalid(format!(
            "teacher-forced scores for {adapter_id} ({arm}): no author has any scored token"
        )));
    }
    let n = kept.len() as f64;
    let mean_logp = kept.values().map(|a| a.mean_logp_per_token).sum::<f64>() / n;
    let top1 = kept.values().map(|a| a.top1_rate).sum::<f64>() / n;
    let ci = interval(
        kept.iter().map(|(k, a)| (k.clone(), a.mean_logp_per_token)).collect(),
        params,
    )?;
    let top1_ci = interval(kept.iter().map(|(k, a)| (k.clone(), a.top1_rate)).collect(), params)?;
    Ok(TFResult {
        adapter_id: adapter_id.to_string(),
        arm,
        ppl: (-mean_logp).exp(),
        mean_logp,
        top1,
        ci,
        top1_ci,
        excluded: total - kept.len(),
        ties: kept.values().map(|a| a.ties).sum(),
        per_author: kept,
    })
}

/// Scores one author under one arm.
pub fn score_author(
    backend: &dyn Backend,
    author: &AuthorRecord,
    arm: PrefillArm,
    templates: &TemplateSet,
) -> Result<Option<AuthorTF>> {
    let req = build_tf_context(author, arm, templates)?;
    let resp = backend.score(&req)?;
    Ok(AuthorTF::from_tokens(&resp.tokens))
}
